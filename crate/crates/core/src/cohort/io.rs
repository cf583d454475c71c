//! On-disk cohort layout:
//!
//! ```text
//! <dir>/cohort.csv                      id,AGE,ADAP,...,WEIG
//! <dir>/patients/<id>/manifest.json     VPH1 file names + l2_center_mm
//! <dir>/patients/<id>/{ct,body,liver,spleen,cord}.json/.raw
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Cohort, CohortError, PatientFeatures, PatientId, PatientRecord, Result, FEATURE_NAMES, N_FEATURES};
use crate::voxelgeom::vph1::{read_grid, read_mask, write_grid, write_mask};
use crate::voxelgeom::Point3;

pub const COHORT_CSV: &str = "cohort.csv";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub id: PatientId,
    pub ct: String,
    pub body: String,
    pub liver: String,
    pub spleen: String,
    pub cord: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extended_body: Option<String>,
    pub l2_center_mm: [f64; 3],
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CohortError + '_ {
    move |source| CohortError::Io { path: path.to_path_buf(), source }
}

pub fn patient_dir(root: &Path, id: PatientId) -> PathBuf {
    root.join("patients").join(id.to_string())
}

/// Reads the feature table only, keyed by id, in file order.
pub fn read_features(csv_path: &Path) -> Result<Vec<(PatientId, PatientFeatures)>> {
    let csv_err = |source| CohortError::Csv { path: csv_path.to_path_buf(), source };
    let mut rdr = csv::Reader::from_path(csv_path).map_err(csv_err)?;
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let mut expected = vec!["id"];
    expected.extend(FEATURE_NAMES);
    if headers.iter().map(str::trim).ne(expected.iter().copied()) {
        return Err(CohortError::InvalidConfig(format!(
            "{}: header must be {}",
            csv_path.display(),
            expected.join(",")
        )));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        let id_text = row.get(0).unwrap_or_default().trim();
        let id = id_text.parse::<u32>().map(PatientId).map_err(|_| {
            CohortError::InvalidConfig(format!("{}: bad patient id {id_text:?}", csv_path.display()))
        })?;
        let mut v = [0.0; N_FEATURES];
        for (i, name) in FEATURE_NAMES.iter().enumerate() {
            let text = row.get(i + 1).unwrap_or_default().trim();
            v[i] = text.parse().map_err(|_| CohortError::InvalidRecord {
                id,
                reason: format!("feature {name} is not a number: {text:?}"),
            })?;
        }
        let f = PatientFeatures::from_array(v);
        f.validate()?;
        out.push((id, f));
    }
    Ok(out)
}

pub fn write_features(csv_path: &Path, rows: &[(PatientId, PatientFeatures)]) -> Result<()> {
    let csv_err = |source| CohortError::Csv { path: csv_path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(csv_path).map_err(csv_err)?;
    let mut header = vec!["id".to_string()];
    header.extend(FEATURE_NAMES.iter().map(|s| s.to_string()));
    w.write_record(&header).map_err(csv_err)?;
    for (id, f) in rows {
        let mut rec = vec![id.to_string()];
        rec.extend(f.to_array().iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(csv_path))
}

pub fn write_cohort(root: &Path, cohort: &Cohort) -> Result<()> {
    fs::create_dir_all(root).map_err(io_err(root))?;
    let rows: Vec<_> = cohort.records().iter().map(|r| (r.id, r.features)).collect();
    write_features(&root.join(COHORT_CSV), &rows)?;
    for r in cohort.records() {
        let dir = patient_dir(root, r.id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        write_grid(&dir.join("ct.json"), &r.ct)?;
        for (name, m) in [("body", &r.body), ("liver", &r.liver), ("spleen", &r.spleen), ("cord", &r.cord)] {
            write_mask(&dir.join(format!("{name}.json")), m)?;
        }
        if let Some(ext) = &r.extended_body {
            write_mask(&dir.join("extended_body.json"), ext)?;
        }
        let manifest = Manifest {
            id: r.id,
            ct: "ct.json".into(),
            body: "body.json".into(),
            liver: "liver.json".into(),
            spleen: "spleen.json".into(),
            cord: "cord.json".into(),
            extended_body: r.extended_body.as_ref().map(|_| "extended_body.json".into()),
            l2_center_mm: r.l2_center.to_array(),
        };
        let path = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(io_err(&path))?;
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| CohortError::Json { path: path.to_path_buf(), source })
}

pub fn read_record(root: &Path, id: PatientId, features: PatientFeatures) -> Result<PatientRecord> {
    let dir = patient_dir(root, id);
    let manifest = read_manifest(&dir.join(MANIFEST))?;
    if manifest.id != id {
        return Err(CohortError::InvalidRecord { id, reason: format!("manifest names patient {}", manifest.id) });
    }
    let record = PatientRecord {
        id,
        features,
        ct: read_grid(&dir.join(&manifest.ct))?,
        body: read_mask(&dir.join(&manifest.body))?,
        liver: read_mask(&dir.join(&manifest.liver))?,
        spleen: read_mask(&dir.join(&manifest.spleen))?,
        cord: read_mask(&dir.join(&manifest.cord))?,
        l2_center: Point3::from_array(manifest.l2_center_mm),
        extended_body: manifest.extended_body.as_ref().map(|f| read_mask(&dir.join(f))).transpose()?,
    };
    record.validate()?;
    Ok(record)
}

pub fn read_cohort(root: &Path) -> Result<Cohort> {
    let rows = read_features(&root.join(COHORT_CSV))?;
    let mut seen = BTreeMap::new();
    let mut records = Vec::with_capacity(rows.len());
    for (id, f) in rows {
        if seen.insert(id, ()).is_some() {
            return Err(CohortError::DuplicateId(id));
        }
        records.push(read_record(root, id, f)?);
    }
    Cohort::new(records)
}
