use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::lasso::Moments;
use super::{check_rows, constant_target, Fitted, Hyper, LinearModel, ModelKind, RegressionModel, RegressorError, Result};
use crate::cohort::Dataset;

/// Knots of the least-angle path. At knot `k` every active variable has
/// absolute correlation `lambdas[k]` (in the `Xᵀr/n` scale of the LASSO
/// objective); coefficients are linear in λ between knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LarsPath {
    pub lambdas: Vec<f64>,
    pub coefs: Vec<Vec<f64>>,
    /// Variables in order of entry.
    pub entered: Vec<usize>,
    pub x_mean: Vec<f64>,
    pub y_mean: f64,
}

impl LarsPath {
    /// Coefficients at `lambda`, interpolated between knots.
    pub fn coef_at(&self, lambda: f64) -> Vec<f64> {
        if lambda >= self.lambdas[0] {
            return self.coefs[0].clone();
        }
        for k in 0..self.lambdas.len() - 1 {
            let (hi, lo) = (self.lambdas[k], self.lambdas[k + 1]);
            if lambda >= lo {
                let t = if hi > lo { (hi - lambda) / (hi - lo) } else { 1.0 };
                return self.coefs[k].iter().zip(&self.coefs[k + 1]).map(|(a, b)| a + t * (b - a)).collect();
            }
        }
        self.coefs.last().expect("non-empty path").clone()
    }

    pub fn model_at(&self, lambda: f64) -> LinearModel {
        let coef = self.coef_at(lambda);
        let intercept = self.y_mean - self.x_mean.iter().zip(&coef).map(|(m, b)| m * b).sum::<f64>();
        LinearModel { intercept, coef }
    }
}

/// Full least-angle regression path (no LASSO drop step).
pub fn lars_path(x: &[Vec<f64>], y: &[f64]) -> Result<LarsPath> {
    if x.len() != y.len() {
        return Err(RegressorError::ShapeError(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(RegressorError::TooFewRows { needed: 2, got: x.len() });
    }
    if constant_target(y) {
        return Err(RegressorError::ConstantTarget);
    }
    let m = Moments::new(x, y);
    let p = m.xty.len();
    let max_active = p.min(x.len() - 1);
    let mut beta = vec![0.0; p];
    let corr = |beta: &[f64]| -> Vec<f64> {
        (0..p).map(|j| m.xty[j] - m.gram[j].iter().zip(beta).map(|(g, b)| g * b).sum::<f64>()).collect()
    };
    let c = corr(&beta);
    let mut big_c = c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut path = LarsPath {
        lambdas: vec![big_c],
        coefs: vec![beta.clone()],
        entered: Vec::new(),
        x_mean: m.x_mean.clone(),
        y_mean: m.y_mean,
    };
    if big_c <= 0.0 {
        return Ok(path);
    }
    let mut active: Vec<usize> = Vec::new();
    let mut next = (0..p).find(|&j| c[j].abs() == big_c);
    while let Some(j) = next.take() {
        active.push(j);
        path.entered.push(j);
        let c = corr(&beta);
        big_c = active.iter().fold(0.0f64, |a, &k| a.max(c[k].abs()));
        let k = active.len();
        let g = DMatrix::from_fn(k, k, |a, b| m.gram[active[a]][active[b]]);
        let s = DVector::from_iterator(k, active.iter().map(|&a| c[a].signum()));
        let Some(chol) = g.cholesky() else {
            active.pop();
            path.entered.pop();
            break;
        };
        let d = chol.solve(&s);
        let mut gamma = big_c;
        let mut joiner = None;
        if active.len() < max_active {
            for (jj, cj) in c.iter().enumerate() {
                if active.contains(&jj) {
                    continue;
                }
                let a: f64 = active.iter().enumerate().map(|(t, &ai)| m.gram[jj][ai] * d[t]).sum();
                for cand in [(big_c - cj) / (1.0 - a), (big_c + cj) / (1.0 + a)] {
                    if cand.is_finite() && cand > 1e-15 * big_c && cand < gamma {
                        gamma = cand;
                        joiner = Some(jj);
                    }
                }
            }
        }
        for (t, &ai) in active.iter().enumerate() {
            beta[ai] += gamma * d[t];
        }
        let lambda = if joiner.is_some() { (big_c - gamma).max(0.0) } else { 0.0 };
        path.lambdas.push(lambda);
        path.coefs.push(beta.clone());
        next = joiner;
    }
    Ok(path)
}

/// LARS model: the path point at `lambda`.
pub fn lars_fit(ds: &Dataset, lambda: f64) -> Result<RegressionModel> {
    check_rows(ds, 2)?;
    if !(lambda >= 0.0) {
        return Err(RegressorError::InvalidConfig(format!("lambda {lambda}")));
    }
    let path = lars_path(&ds.x, &ds.y)?;
    Ok(RegressionModel {
        kind: ModelKind::Lars,
        task: ds.task,
        hyper: Hyper::Lambda(lambda),
        params: ds.params.clone(),
        fitted: Fitted::Linear(path.model_at(lambda)),
    })
}
