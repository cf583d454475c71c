//! Patient-wise leave-one-out evaluation of the learners and the baselines,
//! paired significance tests and reliability curves.

mod baselines;
mod report;
mod stats;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{position_target, Axis, Cohort, CohortError, Oar, PatientId, PatientRecord, Task};
use crate::derive_seed;
use crate::pipeline::{select_by_similarity, train_bundle, CohortTables, ModelBundle, PipelineError};
use crate::regressors::{FitSettings, ModelKind};

pub use baselines::{baseline_hc1, baseline_hc2, baseline_rand, baseline_sct, rand_draws, sct_select, Hc2Bins, HC2_BINS};
pub use report::{
    fold_means, read_results_csv, reliability_curves, summary_table, write_report, write_results_csv, EvalStats,
    MethodSummary,
};
pub use stats::{
    reliability_curve, significance_table, wilcoxon_signed_rank, wilcoxon_test, MethodErrors, MetricBest,
    ReliabilityCurve, SignificanceTable, StatTestResult, Wilcoxon, EXACT_MAX_N, MIN_PAIRS,
};

/// Metric columns share the task order.
pub type MetricId = Task;

/// Errors of one prediction on all nine metrics, in `Task::ALL` order.
pub type MetricErrors = [f64; 9];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least {needed} patients, got {got}")]
    TooFewPatients { needed: usize, got: usize },
    #[error("no other patient falls in the test patient's bin")]
    EmptyBin,
    #[error("database is empty")]
    EmptyDatabase,
    #[error("no errors to summarize")]
    EmptyInput,
    #[error("fold {fold}: {task} training data references the held-out patient")]
    Leakage { fold: PatientId, task: Task },
    #[error("need at least {MIN_PAIRS} non-zero differences, got {0}")]
    TooFewPairs(usize),
    #[error("paired samples differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("patient {0} is not in the cohort")]
    UnknownPatient(PatientId),
    #[error("no pairwise similarity between {0} and {1}")]
    MissingSimilarity(PatientId, PatientId),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("results file: {0}")]
    Parse(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// A learner or a baseline compared in the evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Ml(ModelKind),
    Hc1,
    Hc2,
    Rand,
    Sct,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Ml(ModelKind::Lars),
        Method::Ml(ModelKind::Lasso),
        Method::Ml(ModelKind::Rf),
        Method::Ml(ModelKind::GpTrad),
        Method::Ml(ModelKind::GpGomea),
        Method::Hc1,
        Method::Hc2,
        Method::Rand,
        Method::Sct,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ml(k) => k.name(),
            Method::Hc1 => "HC1",
            Method::Hc2 => "HC2",
            Method::Rand => "RAND",
            Method::Sct => "SCT",
        }
    }

    pub fn from_name(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name().eq_ignore_ascii_case(s))
    }

    fn code(self) -> u64 {
        Method::ALL.iter().position(|m| *m == self).expect("listed") as u64
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self> {
        Method::from_name(s).ok_or_else(|| EvalError::InvalidConfig(format!("unknown method {s:?}")))
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Method::from_name(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoocvConfig {
    pub methods: Vec<Method>,
    pub tau: f64,
    /// Repeats of the stochastic learners (and of sCT, which uses their models).
    pub repeats: usize,
    /// Peer draws averaged by RAND.
    pub rand_repeats: usize,
    pub fit: FitSettings,
    pub seed: u64,
}

impl LoocvConfig {
    pub fn new(methods: Vec<Method>, fit: FitSettings, seed: u64) -> Self {
        LoocvConfig { methods, tau: 5.0, repeats: 10, rand_repeats: 10, fit, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(EvalError::InvalidConfig("no methods selected".into()));
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return Err(EvalError::InvalidConfig("duplicate method".into()));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(EvalError::InvalidConfig(format!("tau must be positive, got {}", self.tau)));
        }
        if self.repeats == 0 || self.rand_repeats == 0 {
            return Err(EvalError::InvalidConfig("repeats must be at least 1".into()));
        }
        Ok(())
    }

    fn repeats_of(&self, m: Method) -> usize {
        match m {
            Method::Ml(k) if k.is_stochastic() => self.repeats,
            Method::Sct => self.repeats,
            Method::Rand => self.rand_repeats,
            _ => 1,
        }
    }
}

/// One method on one held-out patient: per-repeat errors, or the reason it
/// has none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodFold {
    pub method: Method,
    pub repeats: Vec<MetricErrors>,
    pub missing: bool,
}

impl MethodFold {
    /// Mean over repeats, `None` for a missing fold.
    pub fn mean(&self) -> Option<MetricErrors> {
        if self.missing || self.repeats.is_empty() {
            return None;
        }
        Some(mean_errors(&self.repeats))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub held_out: PatientId,
    pub methods: Vec<MethodFold>,
}

impl FoldResult {
    pub fn method(&self, m: Method) -> Option<&MethodFold> {
        self.methods.iter().find(|f| f.method == m)
    }
}

/// Cohort-wide lookups shared by every fold: pair similarities and the
/// L2-relative OAR positions.
pub struct EvalContext<'a> {
    pub cohort: &'a Cohort,
    pub tables: CohortTables,
    positions: BTreeMap<PatientId, [f64; 6]>,
}

fn position_slot(oar: Oar, axis: Axis) -> usize {
    oar as usize * 3 + axis.index()
}

impl<'a> EvalContext<'a> {
    pub fn new(cohort: &'a Cohort, tau: f64) -> Result<Self> {
        let tables = CohortTables::compute(cohort, tau)?;
        Self::with_tables(cohort, tables)
    }

    pub fn with_tables(cohort: &'a Cohort, tables: CohortTables) -> Result<Self> {
        let mut positions = BTreeMap::new();
        for r in cohort.records() {
            let mut p = [0.0; 6];
            for oar in [Oar::Liver, Oar::Spleen] {
                for axis in Axis::ALL {
                    p[position_slot(oar, axis)] = position_target(r, oar, axis)?;
                }
            }
            positions.insert(r.id, p);
        }
        Ok(EvalContext { cohort, tables, positions })
    }

    /// Actual L2-relative position of a patient's OAR along an axis, mm.
    pub fn position(&self, id: PatientId, oar: Oar, axis: Axis) -> Result<f64> {
        let p = self.positions.get(&id).ok_or(EvalError::UnknownPatient(id))?;
        Ok(p[position_slot(oar, axis)])
    }

    fn epsilon(&self, task: Task, test: PatientId, other: PatientId) -> Result<f64> {
        let target = task.as_retrieval().expect("retrieval task");
        let s = self.tables.matrix(target).get(test, other).ok_or(EvalError::MissingSimilarity(test, other))?;
        Ok(100.0 - s)
    }

    /// Errors of using `peer`'s positions and segmentations for `test`.
    pub fn peer_errors(&self, test: PatientId, peer: PatientId) -> Result<MetricErrors> {
        let mut e = [0.0; 9];
        for (slot, task) in e.iter_mut().zip(Task::ALL) {
            *slot = match task.as_position() {
                Some((oar, axis)) => (self.position(peer, oar, axis)? - self.position(test, oar, axis)?).abs(),
                None => self.epsilon(task, test, peer)?,
            };
        }
        Ok(e)
    }

    /// Errors of a trained bundle on a held-out patient: absolute position
    /// errors, and `100 - sDSC` to the patient selected by predicted similarity.
    pub fn bundle_errors(&self, bundle: &ModelBundle, test: &PatientRecord, db: &[&PatientRecord]) -> Result<MetricErrors> {
        let mut e = [0.0; 9];
        for (slot, task) in e.iter_mut().zip(Task::ALL) {
            *slot = match (task.as_position(), task.as_retrieval()) {
                (Some((oar, axis)), _) => {
                    (bundle.predict_position(oar, axis, &test.features) - self.position(test.id, oar, axis)?).abs()
                }
                (None, Some(target)) => {
                    let (chosen, _) = select_by_similarity(bundle, target, &test.features, db)?;
                    self.epsilon(task, test.id, chosen)?
                }
                (None, None) => unreachable!("every task is a position or retrieval task"),
            };
        }
        Ok(e)
    }
}

/// Mean of several error vectors.
pub(crate) fn mean_errors(rows: &[MetricErrors]) -> MetricErrors {
    let n = rows.len() as f64;
    let mut m = [0.0; 9];
    for r in rows {
        for (acc, v) in m.iter_mut().zip(r) {
            *acc += v;
        }
    }
    m.map(|v| v / n)
}

/// Fold seed of one method repeat; sCT shares the GP-GOMEA seeds so it reuses
/// the same models.
fn repeat_seed(seed: u64, fold: PatientId, method: Method, repeat: usize) -> u64 {
    let m = if method == Method::Sct { Method::Ml(ModelKind::GpGomea) } else { method };
    derive_seed(seed, &[fold.0 as u64, m.code(), repeat as u64])
}

/// Runs one fold: trains every learner on the cohort without `test` and
/// scores learners and baselines on it.
pub fn run_fold(ctx: &EvalContext<'_>, test: PatientId, cfg: &LoocvConfig, hc2: &Hc2Bins) -> Result<FoldResult> {
    let record = ctx.cohort.get(test).ok_or(EvalError::UnknownPatient(test))?;
    let db = ctx.cohort.others(test);
    let datasets = ctx.tables.without_patient(test);
    for ds in &datasets {
        if ds.provenance.iter().any(|p| p.involves(test)) {
            return Err(EvalError::Leakage { fold: test, task: ds.task });
        }
    }

    let gomea = Method::Ml(ModelKind::GpGomea);
    let mut gomea_bundles: Vec<ModelBundle> = Vec::new();
    let train = |method: Method, repeat: usize| -> Result<ModelBundle> {
        let Method::Ml(kind) = method else { unreachable!("only learners are trained") };
        let seed = repeat_seed(cfg.seed, test, method, repeat);
        Ok(train_bundle(&datasets, kind, &cfg.fit, seed)?)
    };

    let mut methods = Vec::with_capacity(cfg.methods.len());
    // GP-GOMEA first so sCT can reuse its bundles.
    let mut order = cfg.methods.clone();
    order.sort_by_key(|m| (*m != gomea, m.code()));
    for &method in &order {
        let n = cfg.repeats_of(method);
        let mut repeats = Vec::with_capacity(n);
        let mut missing = false;
        match method {
            Method::Ml(_) => {
                for r in 0..n {
                    let bundle = train(method, r)?;
                    repeats.push(ctx.bundle_errors(&bundle, record, &db)?);
                    if method == gomea {
                        gomea_bundles.push(bundle);
                    }
                }
            }
            Method::Sct => {
                for r in 0..n {
                    if gomea_bundles.len() <= r {
                        gomea_bundles.push(train(gomea, r)?);
                    }
                    repeats.push(baseline_sct(ctx, &gomea_bundles[r], record, &db)?);
                }
            }
            Method::Rand => {
                repeats = rand_draws(ctx, record.id, &db, n, repeat_seed(cfg.seed, test, method, 0))?;
            }
            Method::Hc1 | Method::Hc2 => {
                let res = if method == Method::Hc1 {
                    baseline_hc1(ctx, record, &db)
                } else {
                    baseline_hc2(ctx, hc2, record, &db)
                };
                match res {
                    Ok(e) => repeats.push(e),
                    Err(EvalError::EmptyBin) => missing = true,
                    Err(e) => return Err(e),
                }
            }
        }
        methods.push(MethodFold { method, repeats, missing });
    }
    methods.sort_by_key(|m| cfg.methods.iter().position(|x| *x == m.method));
    Ok(FoldResult { held_out: test, methods })
}

/// Patient-wise leave-one-out cross-validation over the whole cohort. Folds
/// run in parallel; results come back in patient-id order.
pub fn loocv(cohort: &Cohort, cfg: &LoocvConfig) -> Result<Vec<FoldResult>> {
    cfg.validate()?;
    if cohort.len() < 4 {
        return Err(EvalError::TooFewPatients { needed: 4, got: cohort.len() });
    }
    let ctx = EvalContext::new(cohort, cfg.tau)?;
    let hc2 = Hc2Bins::compute(cohort);
    let ids = cohort.ids();
    let folds = ids
        .par_iter()
        .map(|&id| {
            let f = run_fold(&ctx, id, cfg, &hc2);
            log::info!("fold {id} done");
            f
        })
        .collect::<Result<Vec<_>>>()?;
    for m in &cfg.methods {
        let missing = folds.iter().filter(|f| f.method(*m).is_some_and(|x| x.missing)).count();
        if missing > 0 {
            log::warn!("{m}: {missing} of {} folds have an empty bin and are excluded from its tests", folds.len());
        }
    }
    Ok(folds)
}
