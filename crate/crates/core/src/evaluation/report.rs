use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stats::{reliability_curve, significance_table, MethodErrors, ReliabilityCurve, SignificanceTable};
use super::{EvalError, FoldResult, Method, MethodFold, Result};
use crate::cohort::{PatientId, Task};
use crate::pipeline::task_index;

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    held_out: u32,
    method: String,
    repeat: usize,
    metric: String,
    error: Option<f64>,
}

/// Methods in the order they first appear across folds.
pub(crate) fn methods_of(folds: &[FoldResult]) -> Vec<Method> {
    let mut out = Vec::new();
    for f in folds {
        for m in &f.methods {
            if !out.contains(&m.method) {
                out.push(m.method);
            }
        }
    }
    out
}

/// One row per fold, method, repeat and metric. A missing fold is written
/// once per metric with an empty error.
pub fn write_results_csv(path: &Path, folds: &[FoldResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for f in folds {
        for m in &f.methods {
            if m.missing {
                for t in Task::ALL {
                    w.serialize(Row { held_out: f.held_out.0, method: m.method.name().into(), repeat: 0, metric: t.name().into(), error: None })?;
                }
                continue;
            }
            for (r, errs) in m.repeats.iter().enumerate() {
                for (t, e) in Task::ALL.iter().zip(errs) {
                    w.serialize(Row {
                        held_out: f.held_out.0,
                        method: m.method.name().into(),
                        repeat: r,
                        metric: t.name().into(),
                        error: Some(*e),
                    })?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<FoldResult>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut folds: Vec<FoldResult> = Vec::new();
    for row in rdr.deserialize::<Row>() {
        let row = row?;
        let method = Method::from_name(&row.method).ok_or_else(|| EvalError::Parse(format!("unknown method {:?}", row.method)))?;
        let metric = Task::from_name(&row.metric).ok_or_else(|| EvalError::Parse(format!("unknown metric {:?}", row.metric)))?;
        let id = PatientId(row.held_out);
        if folds.last().is_none_or(|f| f.held_out != id) {
            if folds.iter().any(|f| f.held_out == id) {
                return Err(EvalError::Parse(format!("rows of fold {id} are not contiguous")));
            }
            folds.push(FoldResult { held_out: id, methods: Vec::new() });
        }
        let fold = folds.last_mut().expect("pushed above");
        if fold.methods.last().is_none_or(|m| m.method != method) {
            fold.methods.push(MethodFold { method, repeats: Vec::new(), missing: row.error.is_none() });
        }
        let mf = fold.methods.last_mut().expect("pushed above");
        match row.error {
            None if mf.missing => continue,
            None => return Err(EvalError::Parse(format!("fold {id} {method}: empty error"))),
            Some(_) if mf.missing => return Err(EvalError::Parse(format!("fold {id} {method}: mixed missing rows"))),
            Some(e) => {
                if !(e.is_finite() && e >= 0.0) {
                    return Err(EvalError::Parse(format!("fold {id} {method}: invalid error {e}")));
                }
                if row.repeat == mf.repeats.len() {
                    mf.repeats.push([f64::NAN; 9]);
                } else if row.repeat + 1 != mf.repeats.len() {
                    return Err(EvalError::Parse(format!("fold {id} {method}: repeat {} out of order", row.repeat)));
                }
                mf.repeats.last_mut().expect("pushed above")[task_index(metric)] = e;
            }
        }
    }
    for f in &folds {
        for m in &f.methods {
            if m.repeats.iter().any(|r| r.iter().any(|v| v.is_nan())) {
                return Err(EvalError::Parse(format!("fold {} {}: incomplete metrics", f.held_out, m.method)));
            }
        }
    }
    Ok(folds)
}

/// Fold-mean errors of a method on a metric, aligned with `folds`; `None`
/// where the method is missing.
pub fn fold_means(folds: &[FoldResult], method: Method, metric: Task) -> Vec<Option<f64>> {
    let i = task_index(metric);
    folds.iter().map(|f| f.method(method).and_then(|m| m.mean()).map(|e| e[i])).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: Task,
    /// `None` when the method has no result on any fold.
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub missing_folds: usize,
    pub metrics: Vec<MetricSummary>,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (mean, sd)
}

/// Mean and sample standard deviation of the fold means.
pub fn summary_table(folds: &[FoldResult]) -> Vec<MethodSummary> {
    methods_of(folds)
        .into_iter()
        .map(|method| {
            let missing_folds = folds.iter().filter(|f| f.method(method).is_none_or(|m| m.mean().is_none())).count();
            let metrics = Task::ALL
                .into_iter()
                .map(|metric| {
                    let v: Vec<f64> = fold_means(folds, method, metric).into_iter().flatten().collect();
                    let (mean, sd) = if v.is_empty() { (None, None) } else { let (m, s) = mean_sd(&v); (Some(m), Some(s)) };
                    MetricSummary { metric, mean, sd, n: v.len() }
                })
                .collect();
            MethodSummary { method, missing_folds, metrics }
        })
        .collect()
}

fn method_errors(folds: &[FoldResult]) -> Vec<MethodErrors> {
    let mut out = Vec::new();
    for method in methods_of(folds) {
        for metric in Task::ALL {
            out.push(MethodErrors { method, metric, errors: fold_means(folds, method, metric) });
        }
    }
    out
}

/// Survival curves of the fold-mean errors, per metric and method.
pub fn reliability_curves(folds: &[FoldResult]) -> Vec<(Task, Vec<(Method, ReliabilityCurve)>)> {
    Task::ALL
        .into_iter()
        .map(|metric| {
            let curves = methods_of(folds)
                .into_iter()
                .filter_map(|method| {
                    let v: Vec<f64> = fold_means(folds, method, metric).into_iter().flatten().collect();
                    reliability_curve(&v).ok().map(|c| (method, c))
                })
                .collect();
            (metric, curves)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub folds: usize,
    pub methods: Vec<Method>,
    pub alpha: f64,
    pub missing: BTreeMap<String, usize>,
    pub summary: Vec<MethodSummary>,
    pub significance: SignificanceTable,
}

impl EvalStats {
    pub fn compute(folds: &[FoldResult], alpha: f64) -> Self {
        let summary = summary_table(folds);
        let missing = summary.iter().map(|s| (s.method.name().to_string(), s.missing_folds)).collect();
        EvalStats {
            folds: folds.len(),
            methods: methods_of(folds),
            alpha,
            missing,
            summary,
            significance: significance_table(&method_errors(folds), alpha),
        }
    }
}

fn markdown_table(stats: &EvalStats) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# LOOCV errors\n");
    let _ = writeln!(
        s,
        "Mean ± sd over {} held-out patients. Positions: absolute error in mm. S: 100 − sDSC in %. \
         Bold: no other method is significantly better (Wilcoxon signed-rank, α = {} with Bonferroni correction).\n",
        stats.folds, stats.alpha
    );
    let _ = write!(s, "| Method |");
    for t in Task::ALL {
        let _ = write!(s, " {} ({}) |", t.name(), t.unit());
    }
    let _ = write!(s, "\n|---|");
    for _ in Task::ALL {
        let _ = write!(s, "---|");
    }
    s.push('\n');
    for m in &stats.summary {
        let _ = write!(s, "| {} |", m.method);
        for c in &m.metrics {
            let Some((mean, sd)) = c.mean.zip(c.sd) else {
                let _ = write!(s, " n/a |");
                continue;
            };
            let cell = format!("{mean:.2} ± {sd:.2}");
            if stats.significance.is_best(c.metric, m.method) {
                let _ = write!(s, " **{cell}** |");
            } else {
                let _ = write!(s, " {cell} |");
            }
        }
        s.push('\n');
    }
    let missing: Vec<String> = stats.missing.iter().filter(|(_, n)| **n > 0).map(|(m, n)| format!("{m}: {n}")).collect();
    if !missing.is_empty() {
        let _ = writeln!(s, "\nFolds without a result (empty bin): {}.", missing.join(", "));
    }
    s
}

/// Writes `results.csv`, `tables.md`, one `reliability_<metric>.csv` per
/// metric and `stats.json` into `dir`.
pub fn write_report(dir: &Path, folds: &[FoldResult], alpha: f64) -> Result<EvalStats> {
    if folds.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    fs::create_dir_all(dir)?;
    write_results_csv(&dir.join("results.csv"), folds)?;
    let stats = EvalStats::compute(folds, alpha);
    fs::write(dir.join("tables.md"), markdown_table(&stats))?;
    for (metric, curves) in reliability_curves(folds) {
        let mut w = csv::Writer::from_path(dir.join(format!("reliability_{}.csv", metric.name())))?;
        w.write_record(["method", "threshold", "probability"])?;
        for (method, c) in curves {
            for (x, p) in c.thresholds.iter().zip(&c.probability) {
                w.write_record([method.name().to_string(), x.to_string(), p.to_string()])?;
            }
        }
        w.flush()?;
    }
    fs::write(dir.join("stats.json"), serde_json::to_string_pretty(&stats)?)?;
    Ok(stats)
}
