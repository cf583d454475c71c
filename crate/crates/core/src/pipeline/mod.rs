//! Phantom assembly: receiver selection, resection, position prediction,
//! donor retrieval and transplantation.

mod output;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{
    build_position_dataset, pairwise_features, retrieval_dataset_from_matrix, Axis, Cohort, CohortError, Oar,
    PatientFeatures, PatientId, PatientRecord, RawDataset, RetrievalTarget, SimilarityMatrix, Task,
};
use crate::derive_seed;
use crate::regressors::{tune_and_fit, FitSettings, ModelKind, RegressionModel, RegressorError};
use crate::voxelgeom::{resect, transplant, Mask, Point3, VoxelError, VoxelGrid};

pub use output::{write_phantom, PhantomProvenance, PHANTOM_PROVENANCE};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("database is empty")]
    EmptyDatabase,
    #[error("patient {0} is both the test patient and in the database")]
    TestInDatabase(PatientId),
    #[error("bundle needs 9 models in task order, got {0:?}")]
    IncompleteBundle(Vec<Task>),
    #[error("{oar} transplant: {source}")]
    Transplant { oar: &'static str, source: VoxelError },
    #[error(transparent)]
    Voxel(#[from] VoxelError),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Regressor(#[from] RegressorError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Vph1(#[from] crate::voxelgeom::vph1::Vph1Error),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

pub fn task_index(task: Task) -> usize {
    Task::ALL.iter().position(|t| *t == task).expect("task listed in ALL")
}

/// The nine fitted models, in `Task::ALL` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub models: Vec<RegressionModel>,
}

impl ModelBundle {
    pub fn new(models: Vec<RegressionModel>) -> Result<Self> {
        let tasks: Vec<Task> = models.iter().map(|m| m.task).collect();
        if tasks != Task::ALL {
            return Err(PipelineError::IncompleteBundle(tasks));
        }
        Ok(ModelBundle { models })
    }

    pub fn get(&self, task: Task) -> &RegressionModel {
        &self.models[task_index(task)]
    }

    /// Raw-unit prediction of `task` for a single patient or a pair.
    pub fn predict_position(&self, oar: Oar, axis: Axis, test: &PatientFeatures) -> f64 {
        self.get(Task::position(oar, axis)).predict_raw(&test.to_array())
    }

    pub fn predict_similarity(&self, target: RetrievalTarget, test: &PatientFeatures, other: &PatientFeatures) -> f64 {
        self.get(Task::retrieval(target)).predict_raw(&pairwise_features(test, other))
    }
}

/// Raw datasets of all nine tasks plus the sDSC tables behind the pair tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortTables {
    pub datasets: Vec<RawDataset>,
    pub similarity: Vec<SimilarityMatrix>,
}

impl CohortTables {
    pub fn compute(cohort: &Cohort, tau: f64) -> Result<Self> {
        let similarity = RetrievalTarget::ALL
            .iter()
            .map(|&t| SimilarityMatrix::compute(cohort, t, tau))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let mut datasets = Vec::with_capacity(9);
        for task in Task::ALL {
            let ds = match (task.as_position(), task.as_retrieval()) {
                (Some((oar, axis)), _) => build_position_dataset(cohort, oar, axis)?,
                (None, Some(target)) => retrieval_dataset_from_matrix(cohort, &similarity[target_index(target)]),
                (None, None) => unreachable!("every task is a position or retrieval task"),
            };
            datasets.push(ds);
        }
        Ok(CohortTables { datasets, similarity })
    }

    pub fn matrix(&self, target: RetrievalTarget) -> &SimilarityMatrix {
        &self.similarity[target_index(target)]
    }

    /// Datasets with every row touching `id` removed.
    pub fn without_patient(&self, id: PatientId) -> Vec<RawDataset> {
        self.datasets.iter().map(|d| d.without_patient(id)).collect()
    }
}

fn target_index(t: RetrievalTarget) -> usize {
    RetrievalTarget::ALL.iter().position(|x| *x == t).expect("listed")
}

/// Normalizes each dataset on its own rows, tunes and fits one model per task.
pub fn train_bundle(datasets: &[RawDataset], kind: ModelKind, settings: &FitSettings, seed: u64) -> Result<ModelBundle> {
    let models = datasets
        .par_iter()
        .map(|raw| -> Result<RegressionModel> {
            let ds = raw.normalize()?;
            let s = derive_seed(seed, &[task_index(raw.task) as u64]);
            Ok(tune_and_fit(&ds, kind, settings, s)?)
        })
        .collect::<Result<Vec<_>>>()?;
    ModelBundle::new(models)
}

fn check_db(test: Option<PatientId>, db: &[&PatientRecord]) -> Result<()> {
    if db.is_empty() {
        return Err(PipelineError::EmptyDatabase);
    }
    if let Some(t) = test {
        if db.iter().any(|r| r.id == t) {
            return Err(PipelineError::TestInDatabase(t));
        }
    }
    Ok(())
}

/// Candidate with the largest score; ties go to the smaller id.
pub fn argmax_by_id(scores: impl IntoIterator<Item = (PatientId, f64)>) -> Option<(PatientId, f64)> {
    let mut best: Option<(PatientId, f64)> = None;
    for (id, s) in scores {
        let s = if s.is_nan() { f64::NEG_INFINITY } else { s };
        if best.is_none_or(|(bid, bs)| s > bs || (s == bs && id < bid)) {
            best = Some((id, s));
        }
    }
    best
}

/// Database patient whose `target` segmentation is predicted to be most
/// similar to the test patient's.
pub fn select_by_similarity(
    bundle: &ModelBundle,
    target: RetrievalTarget,
    test: &PatientFeatures,
    db: &[&PatientRecord],
) -> Result<(PatientId, f64)> {
    argmax_by_id(db.iter().map(|r| (r.id, bundle.predict_similarity(target, test, &r.features))))
        .ok_or(PipelineError::EmptyDatabase)
}

pub fn select_receiver(bundle: &ModelBundle, test: &PatientFeatures, db: &[&PatientRecord]) -> Result<(PatientId, f64)> {
    select_by_similarity(bundle, RetrievalTarget::Body, test, db)
}

pub fn select_donor(bundle: &ModelBundle, oar: Oar, test: &PatientFeatures, db: &[&PatientRecord]) -> Result<(PatientId, f64)> {
    select_by_similarity(bundle, RetrievalTarget::from(oar), test, db)
}

/// Predicted L2-relative offset of the OAR's center of mass, in mm.
pub fn predict_offset(bundle: &ModelBundle, oar: Oar, test: &PatientFeatures) -> Point3 {
    let v = Axis::ALL.map(|a| bundle.predict_position(oar, a, test));
    Point3::from_array(v)
}

/// Absolute predicted center of mass in the receiver's frame.
pub fn predict_oar_pose(bundle: &ModelBundle, oar: Oar, test: &PatientFeatures, receiver: &PatientRecord) -> Point3 {
    receiver.l2_center + predict_offset(bundle, oar, test)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OarPlan {
    pub oar: Oar,
    pub donor: PatientId,
    pub donor_score: f64,
    /// Predicted offset from the L2 center, mm.
    pub offset: Point3,
    /// Predicted absolute center of mass in the receiver frame, mm.
    pub com: Point3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomPlan {
    pub test: Option<PatientId>,
    pub features: PatientFeatures,
    pub receiver: PatientId,
    pub receiver_score: f64,
    /// Liver then spleen.
    pub oars: Vec<OarPlan>,
}

impl PhantomPlan {
    pub fn oar(&self, oar: Oar) -> &OarPlan {
        &self.oars[oar_index(oar)]
    }
}

pub(crate) fn oar_index(oar: Oar) -> usize {
    Oar::ALL.iter().position(|o| *o == oar).expect("listed")
}

pub fn plan(bundle: &ModelBundle, test: Option<PatientId>, features: &PatientFeatures, db: &[&PatientRecord]) -> Result<PhantomPlan> {
    check_db(test, db)?;
    let (receiver, receiver_score) = select_receiver(bundle, features, db)?;
    let rec = db.iter().find(|r| r.id == receiver).expect("selected from db");
    let mut oars = Vec::with_capacity(2);
    for oar in Oar::ALL {
        let (donor, donor_score) = select_donor(bundle, oar, features, db)?;
        let offset = predict_offset(bundle, oar, features);
        oars.push(OarPlan { oar, donor, donor_score, offset, com: rec.l2_center + offset });
    }
    debug_assert!(test.is_none_or(|t| receiver != t && oars.iter().all(|o| o.donor != t)));
    Ok(PhantomPlan { test, features: *features, receiver, receiver_score, oars })
}

/// A transplanted organ and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacedOar {
    pub oar: Oar,
    pub donor: PatientId,
    pub donor_ct: VoxelGrid,
    pub donor_mask: Mask,
    /// Receiver position = `scale` × donor position + `shift`, in mm.
    pub scale: f64,
    pub shift: Point3,
    pub clipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub ct: VoxelGrid,
    /// Receiver CT with its own liver and spleen resected.
    pub backdrop: VoxelGrid,
    pub fill_hu: i16,
    pub body: Mask,
    pub cord: Mask,
    pub extended_body: Option<Mask>,
    pub liver: Mask,
    pub spleen: Mask,
    /// Liver then spleen.
    pub placed: Vec<PlacedOar>,
    pub plan: PhantomPlan,
    pub aic_applied: bool,
}

impl Phantom {
    pub fn oar(&self, oar: Oar) -> &Mask {
        match oar {
            Oar::Liver => &self.liver,
            Oar::Spleen => &self.spleen,
        }
    }

    pub fn oar_mut(&mut self, oar: Oar) -> &mut Mask {
        match oar {
            Oar::Liver => &mut self.liver,
            Oar::Spleen => &mut self.spleen,
        }
    }

    pub fn placed(&self, oar: Oar) -> &PlacedOar {
        &self.placed[oar_index(oar)]
    }

    /// Body used for containment checks: the extended body when available.
    pub fn containment_body(&self) -> &Mask {
        self.extended_body.as_ref().unwrap_or(&self.body)
    }
}

/// Resects the receiver's liver and spleen and transplants the planned donor
/// organs at their predicted positions, liver first.
pub fn assemble_plan(plan: PhantomPlan, db: &[&PatientRecord], fill_hu: i16) -> Result<Phantom> {
    let find = |id: PatientId| db.iter().find(|r| r.id == id).copied().ok_or(PipelineError::EmptyDatabase);
    let rec = find(plan.receiver)?;
    let backdrop = resect(&resect(&rec.ct, &rec.liver, fill_hu)?, &rec.spleen, fill_hu)?;
    let mut ct = backdrop.clone();
    let mut placed = Vec::with_capacity(2);
    let mut masks = Vec::with_capacity(2);
    for op in &plan.oars {
        let donor = find(op.donor)?;
        let t = transplant(&ct, &donor.ct, donor.oar(op.oar), op.com)
            .map_err(|source| PipelineError::Transplant { oar: op.oar.name(), source })?;
        if t.clipped > 0 {
            log::warn!("{} transplant clipped {} voxels at the grid edge", op.oar.name(), t.clipped);
        }
        ct = t.ct;
        masks.push(t.mask);
        placed.push(PlacedOar {
            oar: op.oar,
            donor: op.donor,
            donor_ct: donor.ct.clone(),
            donor_mask: donor.oar(op.oar).clone(),
            scale: 1.0,
            shift: t.shift,
            clipped: t.clipped,
        });
    }
    let spleen = masks.pop().expect("two organs");
    let liver = masks.pop().expect("two organs");
    Ok(Phantom {
        ct,
        backdrop,
        fill_hu,
        body: rec.body.clone(),
        cord: rec.cord.clone(),
        extended_body: rec.extended_body.clone(),
        liver,
        spleen,
        placed,
        plan,
        aic_applied: false,
    })
}

/// Plans and assembles a phantom for `features` from the database `db`.
pub fn assemble(
    bundle: &ModelBundle,
    test: Option<PatientId>,
    features: &PatientFeatures,
    db: &[&PatientRecord],
    fill_hu: i16,
) -> Result<Phantom> {
    let p = plan(bundle, test, features, db)?;
    assemble_plan(p, db, fill_hu)
}

#[cfg(test)]
mod tests;
