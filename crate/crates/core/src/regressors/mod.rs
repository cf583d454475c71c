//! Learners for the nine pipeline models: LARS, LASSO, random forests and
//! the two GP variants behind one model contract, plus grid-search tuning.

mod forest;
mod lars;
mod lasso;
mod tune;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{Dataset, Task, ZScoreParams};
use crate::gp::{ims_run, Columns, GpAlgo, ImsConfig, ScaledExpr};

pub use forest::{rf_fit, rf_fit_raw, Forest, ForestConfig, Tree, DEFAULT_TREES};
pub use lars::{lars_fit, lars_path, LarsPath};
pub use lasso::{kkt_residual, lambda_max, lasso_fit, lasso_path, lasso_solve, LassoFit, LASSO_TOLERANCE};
pub use tune::{fold_partition, tune_and_fit, FitSettings, GridSearchSpec};

#[derive(Debug, Error)]
pub enum RegressorError {
    #[error("length mismatch: {0} vs {1}")]
    ShapeError(usize, usize),
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("target is constant")]
    ConstantTarget,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("model file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("model file: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RegressorError>;

/// Mean absolute error.
pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.len() != yhat.len() {
        return Err(RegressorError::ShapeError(y.len(), yhat.len()));
    }
    if y.is_empty() {
        return Err(RegressorError::TooFewRows { needed: 1, got: 0 });
    }
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    Lars,
    Lasso,
    Rf,
    GpTrad,
    GpGomea,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [ModelKind::Lars, ModelKind::Lasso, ModelKind::Rf, ModelKind::GpTrad, ModelKind::GpGomea];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Lars => "LARS",
            ModelKind::Lasso => "LASSO",
            ModelKind::Rf => "RF",
            ModelKind::GpTrad => "GPTrad",
            ModelKind::GpGomea => "GPGOMEA",
        }
    }

    pub fn from_name(s: &str) -> Option<ModelKind> {
        ModelKind::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(s))
    }

    /// Whether repeated fits with different seeds can differ.
    pub fn is_stochastic(self) -> bool {
        matches!(self, ModelKind::Rf | ModelKind::GpTrad | ModelKind::GpGomea)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `intercept + coef · x` on normalized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub coef: Vec<f64>,
}

impl LinearModel {
    pub fn constant(intercept: f64, width: usize) -> Self {
        LinearModel { intercept, coef: vec![0.0; width] }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Hyper {
    None,
    Lambda(f64),
    Forest { n_trees: usize, mtry: usize, min_node_size: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Fitted {
    Linear(LinearModel),
    Forest(Forest),
    Expr { expr: ScaledExpr, text: String },
}

/// A fitted model with the normalization of its training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub kind: ModelKind,
    pub task: Task,
    pub hyper: Hyper,
    pub params: ZScoreParams,
    pub fitted: Fitted,
}

impl RegressionModel {
    /// Prediction in normalized target units from a normalized row.
    pub fn predict_normalized(&self, x: &[f64]) -> f64 {
        match &self.fitted {
            Fitted::Linear(m) => m.predict(x),
            Fitted::Forest(f) => f.predict(x),
            Fitted::Expr { expr, .. } => expr.predict(x),
        }
    }

    /// Prediction in raw target units from a raw feature row.
    pub fn predict_raw(&self, raw: &[f64]) -> f64 {
        let z = self.params.transform_row(raw);
        self.params.target.invert(self.predict_normalized(&z))
    }

    pub fn predict_dataset(&self, ds: &Dataset) -> Vec<f64> {
        ds.x.iter().map(|r| self.predict_normalized(r)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Model that predicts the training mean, used when the target is constant.
pub fn mean_model(ds: &Dataset, kind: ModelKind) -> RegressionModel {
    let mean = ds.y.iter().sum::<f64>() / ds.y.len().max(1) as f64;
    RegressionModel {
        kind,
        task: ds.task,
        hyper: Hyper::None,
        params: ds.params.clone(),
        fitted: Fitted::Linear(LinearModel::constant(mean, ds.n_features())),
    }
}

/// Fits a GP learner under the interleaved multistart scheme.
pub fn expr_model(ds: &Dataset, kind: ModelKind, ims: &ImsConfig) -> RegressionModel {
    let algo = if kind == ModelKind::GpTrad { GpAlgo::Trad } else { GpAlgo::Gomea };
    let out = ims_run(&Columns::new(&ds.x, &ds.y), algo, ims);
    let text = out.best.render(ds.feature_names());
    RegressionModel { kind, task: ds.task, hyper: Hyper::None, params: ds.params.clone(), fitted: Fitted::Expr { expr: out.best, text } }
}

pub(crate) fn check_rows(ds: &Dataset, needed: usize) -> Result<()> {
    if ds.n_rows() < needed {
        return Err(RegressorError::TooFewRows { needed, got: ds.n_rows() });
    }
    if ds.x.len() != ds.y.len() {
        return Err(RegressorError::ShapeError(ds.x.len(), ds.y.len()));
    }
    Ok(())
}

/// Whether every target equals the first one.
pub(crate) fn constant_target(y: &[f64]) -> bool {
    y.iter().all(|v| *v == y[0])
}
