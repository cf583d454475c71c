use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;

use phantom_core::aic::CorrectionLog;
use phantom_core::cohort::io::{read_cohort, read_features, read_manifest, COHORT_CSV, MANIFEST};
use phantom_core::cohort::synth::SynthConfig;
use phantom_core::evaluation::{read_results_csv, EvalStats, Method};
use phantom_core::pipeline::{ModelBundle, PhantomProvenance, PHANTOM_PROVENANCE};
use phantom_core::voxelgeom::vph1;

use super::{PatientErrors, RunConfig, BUNDLE, CORRECTION_LOG, RUN_CONFIG, SYNTH_CONFIG};

#[derive(Debug, Clone, PartialEq)]
pub struct Validated {
    pub path: PathBuf,
    pub kind: &'static str,
}

fn parse_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{}: invalid contents", path.display()))
}

fn is_volume_header(path: &Path) -> Result<bool> {
    let v: serde_json::Value = parse_json(path)?;
    Ok(v.get("dtype").is_some() && v.get("data_file").is_some())
}

/// Reliability curves: per method, thresholds ascending and probabilities
/// strictly decreasing from 1 within (0, 1].
fn check_reliability(path: &Path) -> Result<()> {
    let mut rdr = csv::Reader::from_path(path)?;
    if rdr.headers()?.iter().ne(["method", "threshold", "probability"]) {
        bail!("{}: unexpected header", path.display());
    }
    let mut last: Option<(String, f64, f64)> = None;
    for row in rdr.records() {
        let row = row?;
        let method = row[0].to_string();
        if Method::from_name(&method).is_none() {
            bail!("{}: unknown method {method:?}", path.display());
        }
        let x: f64 = row[1].parse()?;
        let p: f64 = row[2].parse()?;
        if !(p > 0.0 && p <= 1.0 && x.is_finite()) {
            bail!("{}: invalid point ({x}, {p})", path.display());
        }
        match &last {
            Some((m, lx, lp)) if *m == method => {
                if !(x > *lx && p < *lp) {
                    bail!("{}: {method} curve is not a decreasing step function", path.display());
                }
            }
            _ if p != 1.0 => bail!("{}: {method} curve does not start at 1", path.display()),
            _ => {}
        }
        last = Some((method, x, p));
    }
    Ok(())
}

/// Validates one file by name, or every recognized file under a directory.
/// A directory holding a cohort table is read as a whole cohort.
pub fn validate_path(path: &Path) -> Result<Vec<Validated>> {
    let mut out = Vec::new();
    if path.is_dir() {
        if path.join(COHORT_CSV).exists() {
            let c = read_cohort(path).with_context(|| format!("cohort {}", path.display()))?;
            out.push(Validated { path: path.to_path_buf(), kind: "cohort" });
            log::info!("cohort of {} patients", c.len());
            if path.join(SYNTH_CONFIG).exists() {
                parse_json::<SynthConfig>(&path.join(SYNTH_CONFIG))?;
                out.push(Validated { path: path.join(SYNTH_CONFIG), kind: "synthetic cohort config" });
            }
            return Ok(out);
        }
        let mut entries: Vec<PathBuf> = fs::read_dir(path)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
        entries.sort();
        for p in entries {
            let skip = p.extension().is_some_and(|e| e == "raw" || e == "md");
            if !skip {
                out.extend(validate_path(&p)?);
            }
        }
        return Ok(out);
    }
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let kind = match name {
        n if n == COHORT_CSV => {
            read_features(path)?;
            "feature table"
        }
        "results.csv" => {
            read_results_csv(path)?;
            "fold results"
        }
        n if n.starts_with("reliability_") && n.ends_with(".csv") => {
            check_reliability(path)?;
            "reliability curve"
        }
        "stats.json" => {
            parse_json::<EvalStats>(path)?;
            "evaluation statistics"
        }
        n if n == PHANTOM_PROVENANCE => {
            parse_json::<PhantomProvenance>(path)?;
            "phantom provenance"
        }
        n if n == CORRECTION_LOG => {
            parse_json::<CorrectionLog>(path)?;
            "correction log"
        }
        n if n == RUN_CONFIG => {
            parse_json::<RunConfig>(path)?;
            "run configuration"
        }
        n if n == SYNTH_CONFIG => {
            parse_json::<SynthConfig>(path)?;
            "synthetic cohort config"
        }
        n if n == MANIFEST => {
            read_manifest(path)?;
            "patient manifest"
        }
        n if n == BUNDLE => {
            parse_json::<ModelBundle>(path)?;
            "model bundle"
        }
        n if n.ends_with(".json") && is_volume_header(path)? => {
            vph1::validate(path)?;
            "volume"
        }
        n if n.ends_with(".json") => {
            let v: serde_json::Value = parse_json(path)?;
            if v.get("models").is_some() {
                parse_json::<ModelBundle>(path)?;
                "model bundle"
            } else if v.is_array() {
                parse_json::<Vec<PatientErrors>>(path)?;
                "patient errors"
            } else {
                bail!("{}: unrecognized file", path.display());
            }
        }
        _ => bail!("{}: unrecognized file", path.display()),
    };
    out.push(Validated { path: path.to_path_buf(), kind });
    Ok(out)
}
