use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{mean_errors, EvalContext, EvalError, MetricErrors, Result};
use crate::cohort::{Axis, Cohort, Oar, PatientId, PatientRecord};
use crate::pipeline::ModelBundle;

fn peers_mean(ctx: &EvalContext<'_>, test: PatientId, peers: &[PatientId]) -> Result<MetricErrors> {
    if peers.is_empty() {
        return Err(EvalError::EmptyBin);
    }
    let rows = peers.iter().map(|&q| ctx.peer_errors(test, q)).collect::<Result<Vec<_>>>()?;
    Ok(mean_errors(&rows))
}

/// Mean error against every database patient of the same age rounded to
/// whole years.
pub fn baseline_hc1(ctx: &EvalContext<'_>, test: &PatientRecord, db: &[&PatientRecord]) -> Result<MetricErrors> {
    let bin = test.features.age.round();
    let peers: Vec<PatientId> = db.iter().filter(|r| r.features.age.round() == bin).map(|r| r.id).collect();
    peers_mean(ctx, test.id, &peers)
}

/// Gender plus equal-count height and weight quintiles over a whole cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct Hc2Bins {
    cells: BTreeMap<PatientId, (u8, usize, usize)>,
}

pub const HC2_BINS: usize = 5;

/// Quintile of every patient by `value`; ties are ordered by id.
fn quantile_bins(cohort: &Cohort, value: impl Fn(&PatientRecord) -> f64) -> BTreeMap<PatientId, usize> {
    let mut order: Vec<&PatientRecord> = cohort.records().iter().collect();
    order.sort_by_key(|r| r.id);
    order.sort_by(|a, b| value(a).total_cmp(&value(b)));
    let n = order.len();
    order.iter().enumerate().map(|(rank, r)| (r.id, rank * HC2_BINS / n)).collect()
}

impl Hc2Bins {
    pub fn compute(cohort: &Cohort) -> Self {
        let h = quantile_bins(cohort, |r| r.features.heig);
        let w = quantile_bins(cohort, |r| r.features.weig);
        let cells = cohort.records().iter().map(|r| (r.id, (r.features.gend as u8, h[&r.id], w[&r.id]))).collect();
        Hc2Bins { cells }
    }

    /// Gender, height bin and weight bin of a patient.
    pub fn cell(&self, id: PatientId) -> Option<(u8, usize, usize)> {
        self.cells.get(&id).copied()
    }
}

/// Mean error against the database patients sharing the test patient's
/// gender, height bin and weight bin.
pub fn baseline_hc2(
    ctx: &EvalContext<'_>,
    bins: &Hc2Bins,
    test: &PatientRecord,
    db: &[&PatientRecord],
) -> Result<MetricErrors> {
    let cell = bins.cell(test.id).ok_or(EvalError::UnknownPatient(test.id))?;
    let peers: Vec<PatientId> = db.iter().filter(|r| bins.cell(r.id) == Some(cell)).map(|r| r.id).collect();
    peers_mean(ctx, test.id, &peers)
}

/// Errors of `repeats` peers drawn uniformly from the database.
pub fn rand_draws(
    ctx: &EvalContext<'_>,
    test: PatientId,
    db: &[&PatientRecord],
    repeats: usize,
    seed: u64,
) -> Result<Vec<MetricErrors>> {
    if db.is_empty() {
        return Err(EvalError::EmptyDatabase);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..repeats.max(1)).map(|_| ctx.peer_errors(test, db[rng.random_range(0..db.len())].id)).collect()
}

/// Mean error over `repeats` uniformly drawn peers.
pub fn baseline_rand(
    ctx: &EvalContext<'_>,
    test: PatientId,
    db: &[&PatientRecord],
    repeats: usize,
    seed: u64,
) -> Result<MetricErrors> {
    Ok(mean_errors(&rand_draws(ctx, test, db, repeats, seed)?))
}

/// Database CT whose actual OAR positions are closest, in summed squares over
/// both OARs and all axes, to the bundle's predictions. Ties go to the
/// smaller id.
pub fn sct_select(
    ctx: &EvalContext<'_>,
    bundle: &ModelBundle,
    test: &PatientRecord,
    db: &[&PatientRecord],
) -> Result<PatientId> {
    let mut pred = Vec::with_capacity(6);
    for oar in [Oar::Liver, Oar::Spleen] {
        for axis in Axis::ALL {
            pred.push((oar, axis, bundle.predict_position(oar, axis, &test.features)));
        }
    }
    let mut best: Option<(PatientId, f64)> = None;
    for r in db {
        let mut cost = 0.0;
        for &(oar, axis, p) in &pred {
            cost += (p - ctx.position(r.id, oar, axis)?).powi(2);
        }
        if best.is_none_or(|(id, c)| cost < c || (cost == c && r.id < id)) {
            best = Some((r.id, cost));
        }
    }
    best.map(|b| b.0).ok_or(EvalError::EmptyDatabase)
}

/// All nine errors measured against the single CT picked by `sct_select`.
pub fn baseline_sct(
    ctx: &EvalContext<'_>,
    bundle: &ModelBundle,
    test: &PatientRecord,
    db: &[&PatientRecord],
) -> Result<MetricErrors> {
    let ct = sct_select(ctx, bundle, test, db)?;
    ctx.peer_errors(test.id, ct)
}
