use super::{check_rows, constant_target, Fitted, Hyper, LinearModel, ModelKind, RegressionModel, RegressorError, Result};
use crate::cohort::Dataset;

/// Coordinate descent stops once no coefficient moves by more than this.
pub const LASSO_TOLERANCE: f64 = 1e-9;
const MAX_SWEEPS: usize = 200_000;

/// Solution of one coordinate-descent solve.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub model: LinearModel,
    /// Objective after each sweep.
    pub objective: Vec<f64>,
    pub converged: bool,
}

/// Centered covariance statistics: `G = XcᵀXc/n`, `c = Xcᵀyc/n`.
pub(crate) struct Moments {
    pub x_mean: Vec<f64>,
    pub y_mean: f64,
    pub gram: Vec<Vec<f64>>,
    pub xty: Vec<f64>,
    pub yty: f64,
}

impl Moments {
    pub fn new(x: &[Vec<f64>], y: &[f64]) -> Moments {
        let n = x.len() as f64;
        let p = x.first().map_or(0, |r| r.len());
        let mut x_mean = vec![0.0; p];
        for r in x {
            for (m, v) in x_mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        x_mean.iter_mut().for_each(|m| *m /= n);
        let y_mean = y.iter().sum::<f64>() / n;
        let mut gram = vec![vec![0.0; p]; p];
        let mut xty = vec![0.0; p];
        let mut yty = 0.0;
        let mut xc = vec![0.0; p];
        for (r, &t) in x.iter().zip(y) {
            for j in 0..p {
                xc[j] = r[j] - x_mean[j];
            }
            let yc = t - y_mean;
            yty += yc * yc;
            for j in 0..p {
                xty[j] += xc[j] * yc;
                for k in j..p {
                    gram[j][k] += xc[j] * xc[k];
                }
            }
        }
        for j in 0..p {
            xty[j] /= n;
            for k in j..p {
                gram[j][k] /= n;
                gram[k][j] = gram[j][k];
            }
        }
        Moments { x_mean, y_mean, gram, xty, yty: yty / n }
    }

    pub fn intercept(&self, beta: &[f64]) -> f64 {
        self.y_mean - self.x_mean.iter().zip(beta).map(|(m, b)| m * b).sum::<f64>()
    }
}

fn soft(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Largest KKT violation given `q = Gβ`.
fn kkt_from(m: &Moments, beta: &[f64], q: &[f64], lambda: f64) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..beta.len() {
        let g = m.xty[j] - q[j];
        let v = if beta[j] != 0.0 { (g - lambda * beta[j].signum()).abs() } else { (g.abs() - lambda).max(0.0) };
        worst = worst.max(v);
    }
    worst
}

/// Smallest λ at which every coefficient is zero: `max_j |Xcⱼᵀ yc| / n`.
pub fn lambda_max(x: &[Vec<f64>], y: &[f64]) -> f64 {
    Moments::new(x, y).xty.iter().fold(0.0, |a, v| a.max(v.abs()))
}

fn check_inputs(x: &[Vec<f64>], y: &[f64], lambdas: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(RegressorError::ShapeError(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(RegressorError::TooFewRows { needed: 2, got: x.len() });
    }
    if let Some(l) = lambdas.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
        return Err(RegressorError::InvalidConfig(format!("lambda {l}")));
    }
    if constant_target(y) {
        return Err(RegressorError::ConstantTarget);
    }
    Ok(())
}

/// Coordinate descent from the starting coefficients `beta`.
fn descend(m: &Moments, lambda: f64, mut beta: Vec<f64>) -> LassoFit {
    let p = m.xty.len();
    let mut q: Vec<f64> = (0..p).map(|j| m.gram[j].iter().zip(&beta).map(|(g, b)| g * b).sum()).collect();
    let objective_of = |beta: &[f64], q: &[f64]| {
        let mut quad = 0.0;
        let mut lin = 0.0;
        let mut l1 = 0.0;
        for j in 0..p {
            quad += beta[j] * q[j];
            lin += beta[j] * m.xty[j];
            l1 += beta[j].abs();
        }
        0.5 * (m.yty - 2.0 * lin + quad) + lambda * l1
    };
    let mut objective = Vec::new();
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut max_change = 0.0f64;
        for j in 0..p {
            let gjj = m.gram[j][j];
            if gjj <= 0.0 {
                continue;
            }
            let old = beta[j];
            let partial = m.xty[j] - q[j] + gjj * old;
            let new = soft(partial, lambda) / gjj;
            let delta = new - old;
            if delta != 0.0 {
                beta[j] = new;
                for (qk, gk) in q.iter_mut().zip(&m.gram[j]) {
                    *qk += gk * delta;
                }
                max_change = max_change.max(delta.abs());
            }
        }
        objective.push(objective_of(&beta, &q));
        if max_change < LASSO_TOLERANCE && kkt_from(m, &beta, &q, lambda) < LASSO_TOLERANCE {
            converged = true;
            break;
        }
    }
    let intercept = m.intercept(&beta);
    LassoFit { model: LinearModel { intercept, coef: beta }, objective, converged }
}

/// Minimizes `(1/2n)·Σ(y − Xβ − β₀)² + λ·Σ|β|` by cyclic coordinate descent
/// with covariance updates, starting from zero.
pub fn lasso_solve(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<LassoFit> {
    check_inputs(x, y, &[lambda])?;
    let m = Moments::new(x, y);
    let p = m.xty.len();
    Ok(descend(&m, lambda, vec![0.0; p]))
}

/// Solutions for each λ in turn, each warm-started from the previous one;
/// pass λ in decreasing order.
pub fn lasso_path(x: &[Vec<f64>], y: &[f64], lambdas: &[f64]) -> Result<Vec<LassoFit>> {
    check_inputs(x, y, lambdas)?;
    let m = Moments::new(x, y);
    let mut beta = vec![0.0; m.xty.len()];
    let mut out = Vec::with_capacity(lambdas.len());
    for &l in lambdas {
        let fit = descend(&m, l, beta);
        beta = fit.model.coef.clone();
        out.push(fit);
    }
    Ok(out)
}

/// Largest KKT violation of `model` recomputed from the data.
pub fn kkt_residual(x: &[Vec<f64>], y: &[f64], model: &LinearModel, lambda: f64) -> f64 {
    let n = x.len() as f64;
    let p = model.coef.len();
    let mut g = vec![0.0; p];
    let m = Moments::new(x, y);
    for (r, &t) in x.iter().zip(y) {
        let res = t - model.predict(r);
        for j in 0..p {
            g[j] += (r[j] - m.x_mean[j]) * res;
        }
    }
    let mut worst = 0.0f64;
    for j in 0..p {
        let gj = g[j] / n;
        let b = model.coef[j];
        let v = if b != 0.0 { (gj - lambda * b.signum()).abs() } else { (gj.abs() - lambda).max(0.0) };
        worst = worst.max(v);
    }
    worst
}

/// LASSO model on a normalized dataset.
pub fn lasso_fit(ds: &Dataset, lambda: f64) -> Result<RegressionModel> {
    check_rows(ds, 2)?;
    let fit = lasso_solve(&ds.x, &ds.y, lambda)?;
    if !fit.converged {
        log::warn!("{}: coordinate descent hit the sweep limit at lambda {lambda}", ds.task);
    }
    Ok(RegressionModel {
        kind: ModelKind::Lasso,
        task: ds.task,
        hyper: Hyper::Lambda(lambda),
        params: ds.params.clone(),
        fitted: Fitted::Linear(fit.model),
    })
}
