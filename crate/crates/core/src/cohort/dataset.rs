use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Axis, Cohort, CohortError, Oar, PatientFeatures, PatientId, PatientRecord, Result, Task, ZScoreParams};
use super::{FEATURE_NAMES, N_FEATURES};
use crate::voxelgeom::{center_of_mass, sdsc};

/// Segmentation compared by a retrieval model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RetrievalTarget {
    Body,
    Liver,
    Spleen,
}

impl RetrievalTarget {
    pub const ALL: [RetrievalTarget; 3] = [RetrievalTarget::Body, RetrievalTarget::Liver, RetrievalTarget::Spleen];

    /// Retrieval similarity is computed after center-of-mass alignment for
    /// every target, the body included.
    pub fn aligned(self) -> bool {
        true
    }
}

impl From<Oar> for RetrievalTarget {
    fn from(oar: Oar) -> Self {
        match oar {
            Oar::Liver => RetrievalTarget::Liver,
            Oar::Spleen => RetrievalTarget::Spleen,
        }
    }
}

/// Which patient(s) a dataset row was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Single(PatientId),
    Pair(PatientId, PatientId),
}

impl Provenance {
    pub fn involves(&self, id: PatientId) -> bool {
        match *self {
            Provenance::Single(p) => p == id,
            Provenance::Pair(p, q) => p == id || q == id,
        }
    }
}

/// Per-feature absolute differences of raw features.
pub fn pairwise_features(p: &PatientFeatures, q: &PatientFeatures) -> [f64; N_FEATURES] {
    let a = p.to_array();
    let b = q.to_array();
    let mut out = [0.0; N_FEATURES];
    for i in 0..N_FEATURES {
        out[i] = (a[i] - b[i]).abs();
    }
    out
}

/// Rows in raw units, before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub task: Task,
    pub feature_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub provenance: Vec<Provenance>,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Drops every row that references `id`.
    pub fn without_patient(&self, id: PatientId) -> RawDataset {
        self.filter(|p| !p.involves(id))
    }

    pub fn filter(&self, keep: impl Fn(&Provenance) -> bool) -> RawDataset {
        let mut out = RawDataset {
            task: self.task,
            feature_names: self.feature_names.clone(),
            rows: Vec::new(),
            targets: Vec::new(),
            provenance: Vec::new(),
        };
        for i in 0..self.len() {
            if keep(&self.provenance[i]) {
                out.rows.push(self.rows[i].clone());
                out.targets.push(self.targets[i]);
                out.provenance.push(self.provenance[i]);
            }
        }
        out
    }

    /// Z-scores features and target using parameters fitted on these rows.
    pub fn normalize(&self) -> Result<Dataset> {
        let params = ZScoreParams::fit(&self.rows, &self.targets, &self.feature_names)?;
        let x = self.rows.iter().map(|r| params.transform_row(r)).collect();
        let y = self.targets.iter().map(|&t| params.target.apply(t)).collect();
        Ok(Dataset { task: self.task, x, y, provenance: self.provenance.clone(), params })
    }
}

/// Normalized training data for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub provenance: Vec<Provenance>,
    pub params: ZScoreParams,
}

impl Dataset {
    /// Builds a dataset directly from normalized columns (identity scaling).
    pub fn from_normalized(task: Task, names: Vec<String>, x: Vec<Vec<f64>>, y: Vec<f64>) -> Dataset {
        let width = names.len();
        let n = x.len();
        Dataset {
            task,
            x,
            y,
            provenance: (0..n).map(|i| Provenance::Single(PatientId(i as u32))).collect(),
            params: ZScoreParams {
                columns: (0..width).collect(),
                names,
                features: vec![super::ZScore::IDENTITY; width],
                target: super::ZScore::IDENTITY,
            },
        }
    }

    pub fn n_rows(&self) -> usize {
        self.x.len()
    }

    pub fn n_features(&self) -> usize {
        self.params.n_features()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.params.names
    }

    /// Rows at `indices`, keeping the normalization of `self`.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            task: self.task,
            x: indices.iter().map(|&i| self.x[i].clone()).collect(),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            provenance: indices.iter().map(|&i| self.provenance[i]).collect(),
            params: self.params.clone(),
        }
    }
}

/// Signed distance (mm) from the L2 center to the OAR center of mass along `axis`.
pub fn position_target(record: &PatientRecord, oar: Oar, axis: Axis) -> Result<f64> {
    let com = center_of_mass(record.oar(oar))?;
    Ok(com.axis(axis.index()) - record.l2_center.axis(axis.index()))
}

fn feature_names() -> Vec<String> {
    FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
}

/// One row per patient with the raw L2-relative OAR position as target.
pub fn build_position_dataset(cohort: &Cohort, oar: Oar, axis: Axis) -> Result<RawDataset> {
    if cohort.len() < 2 {
        return Err(CohortError::TooFewPatients { needed: 2, got: cohort.len() });
    }
    let mut ds = RawDataset {
        task: Task::position(oar, axis),
        feature_names: feature_names(),
        rows: Vec::with_capacity(cohort.len()),
        targets: Vec::with_capacity(cohort.len()),
        provenance: Vec::with_capacity(cohort.len()),
    };
    for r in cohort.records() {
        ds.rows.push(r.features.to_array().to_vec());
        ds.targets.push(position_target(r, oar, axis)?);
        ds.provenance.push(Provenance::Single(r.id));
    }
    Ok(ds)
}

/// Symmetric table of sDSC percentages between every pair of patients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub target: RetrievalTarget,
    pub tau: f64,
    pub ids: Vec<PatientId>,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn compute(cohort: &Cohort, target: RetrievalTarget, tau: f64) -> Result<Self> {
        let records = cohort.records();
        let n = records.len();
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        let scores: Vec<f64> = pairs
            .par_iter()
            .map(|&(i, j)| {
                sdsc(
                    records[i].retrieval_mask(target),
                    records[j].retrieval_mask(target),
                    tau,
                    target.aligned(),
                )
            })
            .collect::<std::result::Result<_, _>>()?;
        let mut values = vec![100.0; n * n];
        for (&(i, j), &s) in pairs.iter().zip(&scores) {
            values[i * n + j] = s;
            values[j * n + i] = s;
        }
        Ok(SimilarityMatrix { target, tau, ids: records.iter().map(|r| r.id).collect(), values })
    }

    fn position(&self, id: PatientId) -> Option<usize> {
        self.ids.iter().position(|&x| x == id)
    }

    /// sDSC between two patients; `None` for unknown ids.
    pub fn get(&self, p: PatientId, q: PatientId) -> Option<f64> {
        let i = self.position(p)?;
        let j = self.position(q)?;
        Some(self.values[i * self.ids.len() + j])
    }
}

/// One row per unordered pair, pairwise feature differences as input and
/// the sDSC percentage as target.
pub fn build_retrieval_dataset(cohort: &Cohort, target: RetrievalTarget, tau: f64) -> Result<RawDataset> {
    if cohort.len() < 3 {
        return Err(CohortError::TooFewPatients { needed: 3, got: cohort.len() });
    }
    let matrix = SimilarityMatrix::compute(cohort, target, tau)?;
    Ok(retrieval_dataset_from_matrix(cohort, &matrix))
}

/// Pair dataset over the cohort patients, targets looked up in `matrix`.
pub fn retrieval_dataset_from_matrix(cohort: &Cohort, matrix: &SimilarityMatrix) -> RawDataset {
    let records = cohort.records();
    let n = records.len();
    let mut ds = RawDataset {
        task: Task::retrieval(matrix.target),
        feature_names: feature_names(),
        rows: Vec::with_capacity(n * (n - 1) / 2),
        targets: Vec::with_capacity(n * (n - 1) / 2),
        provenance: Vec::with_capacity(n * (n - 1) / 2),
    };
    for i in 0..n {
        for j in i + 1..n {
            let (p, q) = (&records[i], &records[j]);
            ds.rows.push(pairwise_features(&p.features, &q.features).to_vec());
            ds.targets.push(matrix.get(p.id, q.id).expect("matrix covers cohort"));
            ds.provenance.push(Provenance::Pair(p.id, q.id));
        }
    }
    ds
}
