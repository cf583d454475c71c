use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Phantom, PhantomPlan, Result};
use crate::voxelgeom::vph1::{write_grid, write_mask};

pub const PHANTOM_PROVENANCE: &str = "provenance.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub oar: String,
    pub clipped: usize,
}

/// Where a phantom came from: the plan, the models and any repairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomProvenance {
    pub plan: PhantomPlan,
    pub models: Vec<String>,
    pub seed: u64,
    pub fill_hu: i16,
    pub clipping: Vec<ClipEntry>,
    pub aic_applied: bool,
    /// VPH1 header files written next to this record.
    pub files: Vec<String>,
}

impl PhantomProvenance {
    pub fn new(ph: &Phantom, models: Vec<String>, seed: u64) -> Self {
        let mut files: Vec<String> = ["ct", "body", "cord", "liver", "spleen"].iter().map(|n| format!("{n}.json")).collect();
        if ph.extended_body.is_some() {
            files.push("extended_body.json".into());
        }
        PhantomProvenance {
            plan: ph.plan.clone(),
            models,
            seed,
            fill_hu: ph.fill_hu,
            clipping: ph.placed.iter().map(|p| ClipEntry { oar: p.oar.name().into(), clipped: p.clipped }).collect(),
            aic_applied: ph.aic_applied,
            files,
        }
    }
}

/// Writes the phantom volumes as VPH1 files plus `provenance.json`.
pub fn write_phantom(dir: &Path, ph: &Phantom, prov: &PhantomProvenance) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_grid(&dir.join("ct.json"), &ph.ct)?;
    write_mask(&dir.join("body.json"), &ph.body)?;
    write_mask(&dir.join("cord.json"), &ph.cord)?;
    write_mask(&dir.join("liver.json"), &ph.liver)?;
    write_mask(&dir.join("spleen.json"), &ph.spleen)?;
    if let Some(ext) = &ph.extended_body {
        write_mask(&dir.join("extended_body.json"), ext)?;
    }
    fs::write(dir.join(PHANTOM_PROVENANCE), serde_json::to_string_pretty(prov)?)?;
    Ok(())
}
