use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    constant_target, expr_model, lars_path, lasso_path, mean_model, rf_fit, rf_fit_raw, ForestConfig, Fitted, Hyper,
    LinearModel, ModelKind, RegressionModel, RegressorError, Result, DEFAULT_TREES,
};
use crate::cohort::Dataset;
use crate::gp::ImsConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchSpec {
    pub lambdas: Vec<f64>,
    pub min_node_sizes: Vec<usize>,
    /// Largest mtry tried; `None` means half the feature count.
    pub mtry_max: Option<usize>,
    pub folds: usize,
}

impl Default for GridSearchSpec {
    fn default() -> Self {
        GridSearchSpec {
            lambdas: (-10..=10).map(|e| 10f64.powi(e)).collect(),
            min_node_sizes: vec![5, 10, 15, 20, 25],
            mtry_max: None,
            folds: 5,
        }
    }
}

impl GridSearchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lambdas.is_empty() || self.min_node_sizes.is_empty() || self.folds < 2 {
            return Err(RegressorError::InvalidConfig("empty grid or fewer than 2 folds".into()));
        }
        if self.lambdas.iter().any(|l| !(*l >= 0.0)) || self.min_node_sizes.contains(&0) || self.mtry_max == Some(0) {
            return Err(RegressorError::InvalidConfig("grid values out of range".into()));
        }
        Ok(())
    }

    pub fn mtry_grid(&self, n_features: usize) -> Vec<usize> {
        let hi = self.mtry_max.unwrap_or(n_features / 2).clamp(1, n_features.max(1));
        (1..=hi).collect()
    }
}

/// Everything needed to fit any learner on a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub grid: GridSearchSpec,
    pub n_trees: usize,
    /// GP settings; the seed is replaced per fit.
    pub ims: ImsConfig,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings { grid: GridSearchSpec::default(), n_trees: DEFAULT_TREES, ims: ImsConfig::default() }
    }
}

/// Seeded fold label per row: a shuffled order dealt round-robin.
pub fn fold_partition(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut label = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        label[i] = pos % folds;
    }
    label
}

struct Split {
    train: Dataset,
    valid: Dataset,
}

fn splits(ds: &Dataset, folds: usize, seed: u64) -> Vec<Split> {
    let label = fold_partition(ds.n_rows(), folds, seed);
    (0..folds)
        .map(|f| {
            let tr: Vec<usize> = (0..label.len()).filter(|&i| label[i] != f).collect();
            let va: Vec<usize> = (0..label.len()).filter(|&i| label[i] == f).collect();
            Split { train: ds.subset(&tr), valid: ds.subset(&va) }
        })
        .collect()
}

fn valid_mae(valid: &Dataset, predict: impl Fn(&[f64]) -> f64) -> f64 {
    valid.x.iter().zip(&valid.y).map(|(x, y)| (predict(x) - y).abs()).sum::<f64>() / valid.n_rows() as f64
}

/// Index of the smallest score; candidates are ordered strongest
/// regularization first, so ties keep the earlier one.
fn argmin(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s < scores[best] {
            best = i;
        }
    }
    best
}

fn mean_of(y: &[f64]) -> f64 {
    y.iter().sum::<f64>() / y.len() as f64
}

/// Validation MAE of each λ (in the given order) for a linear learner.
fn linear_scores(kind: ModelKind, splits: &[Split], lambdas: &[f64]) -> Result<Vec<f64>> {
    let mut scores = vec![0.0; lambdas.len()];
    for s in splits {
        let mut models: Vec<LinearModel> = Vec::with_capacity(lambdas.len());
        if s.train.n_rows() < 2 || constant_target(&s.train.y) {
            let m = LinearModel::constant(mean_of(&s.train.y), s.train.n_features());
            models.resize(lambdas.len(), m);
        } else if kind == ModelKind::Lars {
            let path = lars_path(&s.train.x, &s.train.y)?;
            models.extend(lambdas.iter().map(|&l| path.model_at(l)));
        } else {
            models.extend(lasso_path(&s.train.x, &s.train.y, lambdas)?.into_iter().map(|f| f.model));
        }
        for (sc, m) in scores.iter_mut().zip(&models) {
            *sc += valid_mae(&s.valid, |x| m.predict(x));
        }
    }
    scores.iter_mut().for_each(|s| *s /= splits.len() as f64);
    Ok(scores)
}

/// Grid-searches hyper-parameters with seeded k-fold cross-validation, then
/// refits on all rows. GP learners have no grid and are fitted directly.
pub fn tune_and_fit(ds: &Dataset, kind: ModelKind, settings: &FitSettings, seed: u64) -> Result<RegressionModel> {
    settings.grid.validate()?;
    super::check_rows(ds, 2)?;
    if constant_target(&ds.y) {
        return Ok(mean_model(ds, kind));
    }
    let folds = settings.grid.folds.min(ds.n_rows());
    match kind {
        ModelKind::Lars | ModelKind::Lasso => {
            let mut lambdas = settings.grid.lambdas.clone();
            lambdas.sort_by(|a, b| b.total_cmp(a));
            let scores = linear_scores(kind, &splits(ds, folds, seed), &lambdas)?;
            let lambda = lambdas[argmin(&scores)];
            let model = if kind == ModelKind::Lars {
                lars_path(&ds.x, &ds.y)?.model_at(lambda)
            } else {
                let upto: Vec<f64> = lambdas.iter().copied().filter(|l| *l >= lambda).collect();
                lasso_path(&ds.x, &ds.y, &upto)?.pop().expect("selected lambda on the path").model
            };
            Ok(RegressionModel {
                kind,
                task: ds.task,
                hyper: Hyper::Lambda(lambda),
                params: ds.params.clone(),
                fitted: Fitted::Linear(model),
            })
        }
        ModelKind::Rf => {
            let mut nodes = settings.grid.min_node_sizes.clone();
            nodes.sort_by(|a, b| b.cmp(a));
            let mtrys = settings.grid.mtry_grid(ds.n_features());
            let grid: Vec<(usize, usize)> = nodes.iter().flat_map(|&n| mtrys.iter().map(move |&m| (n, m))).collect();
            let sp = splits(ds, folds, seed);
            let mut scores = vec![0.0; grid.len()];
            for s in &sp {
                for (sc, &(min_node, mtry)) in scores.iter_mut().zip(&grid) {
                    let cfg = ForestConfig { n_trees: settings.n_trees, ..ForestConfig::new(mtry, min_node, seed) };
                    let f = rf_fit_raw(&s.train.x, &s.train.y, &cfg)?;
                    *sc += valid_mae(&s.valid, |x| f.predict(x));
                }
            }
            let (min_node, mtry) = grid[argmin(&scores)];
            rf_fit(ds, &ForestConfig { n_trees: settings.n_trees, ..ForestConfig::new(mtry, min_node, seed) })
        }
        ModelKind::GpTrad | ModelKind::GpGomea => {
            let ims = ImsConfig { seed, ..settings.ims.clone() };
            Ok(expr_model(ds, kind, &ims))
        }
    }
}
