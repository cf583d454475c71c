use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{EvalError, Method, Result};
use crate::cohort::Task;

/// Largest number of non-zero differences handled with the exact null
/// distribution.
pub const EXACT_MAX_N: usize = 25;
/// Fewest non-zero differences a test is run on.
pub const MIN_PAIRS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wilcoxon {
    /// Non-zero differences used.
    pub n: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    pub p_value: f64,
    pub exact: bool,
}

/// Mid-ranks (1-based) of `v`, doubled so ties stay integral.
fn doubled_ranks(v: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0u64; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        // Positions i..=j share rank (i+1 + j+1)/2; doubled: i + j + 2.
        for &k in &order[i..=j] {
            ranks[k] = (i + j + 2) as u64;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided Wilcoxon signed-rank test of the paired differences `a - b`.
/// Zero differences are dropped; ties share mid-ranks.
pub fn wilcoxon_test(a: &[f64], b: &[f64]) -> Result<Wilcoxon> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return Ok(Wilcoxon { n, w_plus: 0.0, w_minus: 0.0, p_value: 1.0, exact: true });
    }
    if n < MIN_PAIRS {
        return Err(EvalError::TooFewPairs(n));
    }
    let abs: Vec<f64> = d.iter().map(|x| x.abs()).collect();
    let ranks = doubled_ranks(&abs);
    let total: u64 = ranks.iter().sum();
    let plus2: u64 = ranks.iter().zip(&d).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
    let (w_plus, w_minus) = (plus2 as f64 / 2.0, (total - plus2) as f64 / 2.0);
    if n <= EXACT_MAX_N {
        // counts[s] = number of sign assignments with doubled W+ equal to s.
        let mut counts = vec![0u64; total as usize + 1];
        counts[0] = 1;
        let mut reach = 0usize;
        for &r in &ranks {
            let r = r as usize;
            for s in (0..=reach).rev() {
                if counts[s] != 0 {
                    counts[s + r] += counts[s];
                }
            }
            reach += r;
        }
        let lower: u64 = counts[..=plus2 as usize].iter().sum();
        let upper: u64 = counts[plus2 as usize..].iter().sum();
        let p_value = exact_p(lower.min(upper), n);
        return Ok(Wilcoxon { n, w_plus, w_minus, p_value, exact: true });
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let p_value = if var <= 0.0 {
        1.0
    } else {
        let z = (w_plus - mean) / var.sqrt();
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        (2.0 * normal.cdf(-z.abs())).min(1.0)
    };
    Ok(Wilcoxon { n, w_plus, w_minus, p_value, exact: false })
}

/// Two-sided exact p-value from the smaller tail count over `2^n` sign patterns.
pub(crate) fn exact_p(tail: u64, n: usize) -> f64 {
    let all = 1u64 << n;
    ((2 * tail) as f64 / all as f64).min(1.0)
}

pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(wilcoxon_test(a, b)?.p_value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatTestResult {
    pub metric: Task,
    pub a: Method,
    pub b: Method,
    /// Folds where both methods have a result.
    pub n_pairs: usize,
    pub p_value: f64,
    pub alpha: f64,
    pub significant: bool,
    /// The method with the lower errors when the difference is significant.
    pub better: Option<Method>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBest {
    pub metric: Task,
    pub best: Vec<Method>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceTable {
    pub tests: Vec<StatTestResult>,
    pub best: Vec<MetricBest>,
}

impl SignificanceTable {
    pub fn is_best(&self, metric: Task, method: Method) -> bool {
        self.best.iter().any(|b| b.metric == metric && b.best.contains(&method))
    }
}

/// Fold-level errors of one method on one metric; `None` marks a fold the
/// method could not be evaluated on.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodErrors {
    pub method: Method,
    pub metric: Task,
    pub errors: Vec<Option<f64>>,
}

/// All pairwise tests per metric at Bonferroni-corrected level `alpha / m`,
/// `m` the number of method pairs. A method is best on a metric when no other
/// method is significantly better.
pub fn significance_table(entries: &[MethodErrors], alpha: f64) -> SignificanceTable {
    let mut tests = Vec::new();
    let mut best = Vec::new();
    for metric in Task::ALL {
        let rows: Vec<&MethodErrors> = entries.iter().filter(|e| e.metric == metric).collect();
        if rows.is_empty() {
            continue;
        }
        let k = rows.len();
        let m = (k * (k - 1) / 2).max(1);
        let corrected = alpha / m as f64;
        let mut beaten = vec![false; k];
        for i in 0..k {
            for j in i + 1..k {
                let (a, b): (Vec<f64>, Vec<f64>) = rows[i]
                    .errors
                    .iter()
                    .zip(&rows[j].errors)
                    .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
                    .unzip();
                let (p_value, better) = match wilcoxon_test(&a, &b) {
                    Ok(w) => (w.p_value, if w.w_plus < w.w_minus { i } else { j }),
                    Err(e) => {
                        log::info!("{metric} {} vs {}: {e}; treated as not significant", rows[i].method, rows[j].method);
                        (1.0, i)
                    }
                };
                let significant = p_value < corrected;
                if significant {
                    beaten[if better == i { j } else { i }] = true;
                }
                tests.push(StatTestResult {
                    metric,
                    a: rows[i].method,
                    b: rows[j].method,
                    n_pairs: a.len(),
                    p_value,
                    alpha: corrected,
                    significant,
                    better: significant.then(|| rows[better].method),
                });
            }
        }
        let winners = (0..k).filter(|&i| !beaten[i]).map(|i| rows[i].method).collect();
        best.push(MetricBest { metric, best: winners });
    }
    SignificanceTable { tests, best }
}

/// Empirical probability of an error at least as large as each threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityCurve {
    /// Distinct errors, ascending.
    pub thresholds: Vec<f64>,
    /// `P(error >= thresholds[i])`.
    pub probability: Vec<f64>,
}

impl ReliabilityCurve {
    /// `P(error >= x)` for any `x`.
    pub fn at(&self, x: f64) -> f64 {
        let i = self.thresholds.partition_point(|t| *t < x);
        self.probability.get(i).copied().unwrap_or(0.0)
    }
}

pub fn reliability_curve(errors: &[f64]) -> Result<ReliabilityCurve> {
    if errors.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut thresholds = Vec::new();
    let mut probability = Vec::new();
    for (i, &e) in sorted.iter().enumerate() {
        if i == 0 || e != sorted[i - 1] {
            thresholds.push(e);
            probability.push((sorted.len() - i) as f64 / n);
        }
    }
    Ok(ReliabilityCurve { thresholds, probability })
}
