//! Patient feature schema, normalization and the supervised datasets behind
//! the nine pipeline models, plus a synthetic cohort generator.

mod dataset;
pub mod io;
pub mod synth;
mod zscore;

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::voxelgeom::{center_of_mass, vph1::Vph1Error, Mask, Point3, VoxelError, VoxelGrid};

pub use dataset::{
    build_position_dataset, build_retrieval_dataset, pairwise_features, position_target, Dataset, Provenance,
    retrieval_dataset_from_matrix, RawDataset, RetrievalTarget, SimilarityMatrix,
};
pub use zscore::{zscore_fit, ZScore, ZScoreParams};

#[derive(Debug, Error)]
pub enum CohortError {
    #[error(transparent)]
    Voxel(#[from] VoxelError),
    #[error("feature {0} is constant over the training rows")]
    ConstantFeature(String),
    #[error("need at least {needed} values, got {got}")]
    TooFewValues { needed: usize, got: usize },
    #[error("need at least {needed} patients, got {got}")]
    TooFewPatients { needed: usize, got: usize },
    #[error("feature {name} has invalid value {value}")]
    InvalidFeature { name: &'static str, value: f64 },
    #[error("patient {id}: {reason}")]
    InvalidRecord { id: PatientId, reason: String },
    #[error("patient {id}: generation failed: {reason}")]
    GenerationFailure { id: PatientId, reason: String },
    #[error("invalid synthetic cohort configuration: {0}")]
    InvalidConfig(String),
    #[error("duplicate patient id {0}")]
    DuplicateId(PatientId),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Volume(#[from] Vph1Error),
}

pub type Result<T> = std::result::Result<T, CohortError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PatientId(pub u32);

impl fmt::Display for PatientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Number of recorded patient features.
pub const N_FEATURES: usize = 12;

/// Feature abbreviations, in storage order.
pub const FEATURE_NAMES: [&str; N_FEATURES] =
    ["AGE", "ADAP", "ADLR", "ICSC", "GEND", "HESZ", "HEIG", "LDLR", "RDLR", "RDIS", "SPIS", "WEIG"];

/// Features recorded for a patient, in the units declared by the cohort file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatientFeatures {
    pub age: f64,
    pub adap: f64,
    pub adlr: f64,
    pub icsc: f64,
    /// 0 female, 1 male.
    pub gend: f64,
    pub hesz: f64,
    pub heig: f64,
    pub ldlr: f64,
    pub rdlr: f64,
    pub rdis: f64,
    pub spis: f64,
    pub weig: f64,
}

impl PatientFeatures {
    pub fn to_array(&self) -> [f64; N_FEATURES] {
        [
            self.age, self.adap, self.adlr, self.icsc, self.gend, self.hesz, self.heig, self.ldlr, self.rdlr,
            self.rdis, self.spis, self.weig,
        ]
    }

    pub fn from_array(v: [f64; N_FEATURES]) -> Self {
        PatientFeatures {
            age: v[0],
            adap: v[1],
            adlr: v[2],
            icsc: v[3],
            gend: v[4],
            hesz: v[5],
            heig: v[6],
            ldlr: v[7],
            rdlr: v[8],
            rdis: v[9],
            spis: v[10],
            weig: v[11],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in FEATURE_NAMES.iter().zip(self.to_array()) {
            if !value.is_finite() {
                return Err(CohortError::InvalidFeature { name, value });
            }
        }
        if self.gend != 0.0 && self.gend != 1.0 {
            return Err(CohortError::InvalidFeature { name: "GEND", value: self.gend });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Oar {
    Liver,
    Spleen,
}

impl Oar {
    pub const ALL: [Oar; 2] = [Oar::Liver, Oar::Spleen];

    pub fn name(self) -> &'static str {
        match self {
            Oar::Liver => "liver",
            Oar::Spleen => "spleen",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    LR,
    AP,
    IS,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::LR, Axis::AP, Axis::IS];

    pub fn index(self) -> usize {
        match self {
            Axis::LR => 0,
            Axis::AP => 1,
            Axis::IS => 2,
        }
    }
}

/// The nine learning tasks, in report column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    BodyS,
    LiverLR,
    LiverAP,
    LiverIS,
    LiverS,
    SpleenLR,
    SpleenAP,
    SpleenIS,
    SpleenS,
}

impl Task {
    pub const ALL: [Task; 9] = [
        Task::BodyS,
        Task::LiverLR,
        Task::LiverAP,
        Task::LiverIS,
        Task::LiverS,
        Task::SpleenLR,
        Task::SpleenAP,
        Task::SpleenIS,
        Task::SpleenS,
    ];

    pub fn position(oar: Oar, axis: Axis) -> Task {
        match (oar, axis) {
            (Oar::Liver, Axis::LR) => Task::LiverLR,
            (Oar::Liver, Axis::AP) => Task::LiverAP,
            (Oar::Liver, Axis::IS) => Task::LiverIS,
            (Oar::Spleen, Axis::LR) => Task::SpleenLR,
            (Oar::Spleen, Axis::AP) => Task::SpleenAP,
            (Oar::Spleen, Axis::IS) => Task::SpleenIS,
        }
    }

    pub fn retrieval(target: RetrievalTarget) -> Task {
        match target {
            RetrievalTarget::Body => Task::BodyS,
            RetrievalTarget::Liver => Task::LiverS,
            RetrievalTarget::Spleen => Task::SpleenS,
        }
    }

    /// `Some((oar, axis))` for the six position tasks.
    pub fn as_position(self) -> Option<(Oar, Axis)> {
        Some(match self {
            Task::LiverLR => (Oar::Liver, Axis::LR),
            Task::LiverAP => (Oar::Liver, Axis::AP),
            Task::LiverIS => (Oar::Liver, Axis::IS),
            Task::SpleenLR => (Oar::Spleen, Axis::LR),
            Task::SpleenAP => (Oar::Spleen, Axis::AP),
            Task::SpleenIS => (Oar::Spleen, Axis::IS),
            _ => return None,
        })
    }

    pub fn as_retrieval(self) -> Option<RetrievalTarget> {
        match self {
            Task::BodyS => Some(RetrievalTarget::Body),
            Task::LiverS => Some(RetrievalTarget::Liver),
            Task::SpleenS => Some(RetrievalTarget::Spleen),
            _ => None,
        }
    }

    pub fn is_pairwise(self) -> bool {
        self.as_retrieval().is_some()
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::BodyS => "Body-S",
            Task::LiverLR => "Liver-LR",
            Task::LiverAP => "Liver-AP",
            Task::LiverIS => "Liver-IS",
            Task::LiverS => "Liver-S",
            Task::SpleenLR => "Spleen-LR",
            Task::SpleenAP => "Spleen-AP",
            Task::SpleenIS => "Spleen-IS",
            Task::SpleenS => "Spleen-S",
        }
    }

    pub fn from_name(s: &str) -> Option<Task> {
        Task::ALL.into_iter().find(|t| t.name().eq_ignore_ascii_case(s))
    }

    /// Unit of the error reported for this task.
    pub fn unit(self) -> &'static str {
        if self.is_pairwise() {
            "%"
        } else {
            "mm"
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One database patient: features plus segmented CT anatomy.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub id: PatientId,
    pub features: PatientFeatures,
    pub ct: VoxelGrid,
    pub body: Mask,
    pub liver: Mask,
    pub spleen: Mask,
    pub cord: Mask,
    pub l2_center: Point3,
    pub extended_body: Option<Mask>,
}

impl PatientRecord {
    pub fn oar(&self, oar: Oar) -> &Mask {
        match oar {
            Oar::Liver => &self.liver,
            Oar::Spleen => &self.spleen,
        }
    }

    pub fn retrieval_mask(&self, target: RetrievalTarget) -> &Mask {
        match target {
            RetrievalTarget::Body => &self.body,
            RetrievalTarget::Liver => &self.liver,
            RetrievalTarget::Spleen => &self.spleen,
        }
    }

    /// OAR center of mass relative to the L2 landmark, in mm.
    pub fn oar_offset(&self, oar: Oar) -> Result<Point3> {
        Ok(center_of_mass(self.oar(oar))? - self.l2_center)
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        let g = self.ct.geometry();
        let invalid = |reason: &str| CohortError::InvalidRecord { id: self.id, reason: reason.to_string() };
        for (name, m) in [("body", &self.body), ("liver", &self.liver), ("spleen", &self.spleen), ("cord", &self.cord)] {
            if m.geometry() != g {
                return Err(invalid(&format!("{name} mask geometry differs from CT")));
            }
        }
        if let Some(ext) = &self.extended_body {
            if ext.geometry() != g {
                return Err(invalid("extended body geometry differs from CT"));
            }
        }
        if self.liver.is_empty() || self.spleen.is_empty() {
            return Err(invalid("liver and spleen must be non-empty"));
        }
        if !self.l2_center.is_finite() || !g.contains(self.l2_center) {
            return Err(invalid("L2 center outside the CT"));
        }
        Ok(())
    }
}

/// A database of patient records with unique ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cohort {
    records: Vec<PatientRecord>,
}

impl Cohort {
    pub fn new(records: Vec<PatientRecord>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for r in &records {
            r.validate()?;
            if !seen.insert(r.id) {
                return Err(CohortError::DuplicateId(r.id));
            }
        }
        Ok(Cohort { records })
    }

    pub fn records(&self) -> &[PatientRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: PatientId) -> Option<&PatientRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn ids(&self) -> Vec<PatientId> {
        self.records.iter().map(|r| r.id).collect()
    }

    /// All records except `id`.
    pub fn others(&self, id: PatientId) -> Vec<&PatientRecord> {
        self.records.iter().filter(|r| r.id != id).collect()
    }

    pub fn push(&mut self, record: PatientRecord) -> Result<()> {
        record.validate()?;
        if self.get(record.id).is_some() {
            return Err(CohortError::DuplicateId(record.id));
        }
        self.records.push(record);
        Ok(())
    }
}
