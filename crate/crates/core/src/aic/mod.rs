//! Detection and repair of anatomical inconsistencies in assembled phantoms:
//! organ overlaps, organs touching the (expanded) spinal cord and organs
//! leaving the (shrunk) body.

mod eda;

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::Oar;
use crate::pipeline::{Phantom, PlacedOar};
use crate::voxelgeom::{
    center_of_mass, outside_count, overlap_count, scale_mask, scale_mask_volume, sdsc, snap_shift, surface_indices,
    translate_mask, Geometry, Mask, Point3, SurfaceReference, VoxelError, MAX_VOLUME_FACTOR, MIN_VOLUME_FACTOR,
};

use eda::{EdaSettings, Fitness};

#[derive(Debug, Error)]
pub enum AicError {
    #[error("invalid correction settings: {0}")]
    InvalidConfig(String),
    #[error("no feasible correction within {evaluations} evaluations; best violation {best_violation} voxels")]
    NoFeasibleSolution { best_violation: usize, evaluations: usize },
    #[error(transparent)]
    Voxel(#[from] VoxelError),
}

pub type Result<T> = std::result::Result<T, AicError>;

/// Volume scales are searched on a grid of this many steps per unit.
pub const SCALE_STEPS: f64 = 200.0;
/// Generations without a better feasible solution before the search stops.
pub const STALL_GENERATIONS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AicConfig {
    /// Linear expansion of the spinal cord, as a fraction.
    pub cord_expand: f64,
    /// Linear shrinkage of the body, as a fraction.
    pub body_shrink: f64,
    pub min_volume_scale: f64,
    pub max_volume_scale: f64,
    /// Per-axis translation bound, mm.
    pub max_shift_mm: f64,
    pub tau: f64,
    pub population: usize,
    pub max_evaluations: usize,
    pub seed: u64,
}

impl Default for AicConfig {
    fn default() -> Self {
        AicConfig {
            cord_expand: 0.10,
            body_shrink: 0.025,
            min_volume_scale: 0.25,
            max_volume_scale: 1.25,
            max_shift_mm: 10.0,
            tau: 5.0,
            population: 50,
            max_evaluations: 20_000,
            seed: 0,
        }
    }
}

impl AicConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |s: String| Err(AicError::InvalidConfig(s));
        if !(MIN_VOLUME_FACTOR <= self.min_volume_scale
            && self.min_volume_scale <= 1.0
            && 1.0 <= self.max_volume_scale
            && self.max_volume_scale <= MAX_VOLUME_FACTOR)
        {
            return bad(format!("volume scale bounds [{}, {}]", self.min_volume_scale, self.max_volume_scale));
        }
        if !(self.max_shift_mm >= 0.0 && self.max_shift_mm.is_finite()) {
            return bad(format!("shift bound {}", self.max_shift_mm));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau {}", self.tau));
        }
        if !(self.cord_expand > -1.0 && self.body_shrink < 1.0) {
            return bad(format!("cord expansion {} body shrinkage {}", self.cord_expand, self.body_shrink));
        }
        if self.population < 4 || self.max_evaluations < self.population {
            return bad(format!("population {} max evaluations {}", self.population, self.max_evaluations));
        }
        Ok(())
    }
}

/// Volume scale and translation applied to one organ, about its center of mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OarVars {
    pub volume_scale: f64,
    pub shift: Point3,
}

impl OarVars {
    pub const IDENTITY: OarVars = OarVars { volume_scale: 1.0, shift: Point3::ZERO };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectionVars {
    pub liver: OarVars,
    pub spleen: OarVars,
}

impl CorrectionVars {
    pub fn identity() -> Self {
        CorrectionVars { liver: OarVars::IDENTITY, spleen: OarVars::IDENTITY }
    }

    pub fn get(&self, oar: Oar) -> OarVars {
        match oar {
            Oar::Liver => self.liver,
            Oar::Spleen => self.spleen,
        }
    }

    pub fn within(&self, cfg: &AicConfig) -> bool {
        Oar::ALL.iter().all(|&o| {
            let v = self.get(o);
            (cfg.min_volume_scale..=cfg.max_volume_scale).contains(&v.volume_scale)
                && v.shift.to_array().iter().all(|d| d.abs() <= cfg.max_shift_mm)
        })
    }
}

/// Violating voxel counts. Organ-versus-cord and organ-versus-body counts use
/// the expanded cord and the shrunk body.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub liver_spleen: usize,
    pub liver_cord: usize,
    pub spleen_cord: usize,
    pub liver_outside: usize,
    pub spleen_outside: usize,
    pub total: usize,
}

impl ConstraintReport {
    pub fn is_feasible(&self) -> bool {
        self.total == 0
    }
}

/// Expanded cord and shrunk body the organs are checked against.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintMasks {
    pub cord: Mask,
    pub body: Mask,
}

impl ConstraintMasks {
    pub fn new(ph: &Phantom, cfg: &AicConfig) -> Result<Self> {
        let volume = |linear: f64| linear.powi(3);
        let cord = if ph.cord.is_empty() {
            ph.cord.clone()
        } else {
            scale_mask_volume(&ph.cord, volume(1.0 + cfg.cord_expand))?
        };
        let body = scale_mask_volume(ph.containment_body(), volume(1.0 - cfg.body_shrink))?;
        Ok(ConstraintMasks { cord, body })
    }

    pub fn report(&self, liver: &Mask, spleen: &Mask) -> Result<ConstraintReport> {
        let mut r = ConstraintReport {
            liver_spleen: overlap_count(liver, spleen)?,
            liver_cord: overlap_count(liver, &self.cord)?,
            spleen_cord: overlap_count(spleen, &self.cord)?,
            liver_outside: outside_count(liver, &self.body)?,
            spleen_outside: outside_count(spleen, &self.body)?,
            total: 0,
        };
        r.total = r.liver_spleen + r.liver_cord + r.spleen_cord + r.liver_outside + r.spleen_outside;
        Ok(r)
    }
}

pub fn check(ph: &Phantom, cfg: &AicConfig) -> Result<ConstraintReport> {
    ConstraintMasks::new(ph, cfg)?.report(&ph.liver, &ph.spleen)
}

fn oar_slot(oar: Oar) -> usize {
    match oar {
        Oar::Liver => 0,
        Oar::Spleen => 1,
    }
}

/// Rescales then translates each organ about its center of mass. Voxels the
/// organs leave get their pre-transplant values back; voxels they cover are
/// resampled from the donor CT through the composed transform.
pub fn apply_vars(ph: &Phantom, v: &CorrectionVars) -> Result<Phantom> {
    let mut out = ph.clone();
    let backdrop = ph.backdrop.values();
    for oar in Oar::ALL {
        for idx in ph.oar(oar).occupied() {
            out.ct.values_mut()[idx] = backdrop[idx];
        }
    }
    let g = ph.ct.geometry().clone();
    for oar in Oar::ALL {
        let ov = v.get(oar);
        let old = ph.oar(oar);
        let com = center_of_mass(old)?.to_array();
        let scaled = scale_mask(old, ov.volume_scale)?;
        let (moved, clip) = translate_mask(&scaled, ov.shift);
        let applied = snap_shift(&g, ov.shift);
        let linear = ov.volume_scale.cbrt();
        let placed = &mut out.placed[oar_slot(oar)];
        let before = placed.shift.to_array();
        let mut shift = [0.0; 3];
        for a in 0..3 {
            shift[a] = linear * before[a] + (1.0 - linear) * com[a] + applied[a] as f64 * g.spacing[a];
        }
        placed.scale *= linear;
        placed.shift = Point3::from_array(shift);
        placed.clipped += clip.clipped;
        if clip.clipped > 0 {
            log::warn!("{} correction clipped {} voxels at the grid edge", oar.name(), clip.clipped);
        }
        let values: Vec<(usize, i16)> = moved.occupied().map(|idx| (idx, donor_value(placed, &g, idx, ph.fill_hu))).collect();
        for (idx, hu) in values {
            out.ct.values_mut()[idx] = hu;
        }
        *out.oar_mut(oar) = moved;
    }
    Ok(out)
}

fn donor_value(placed: &PlacedOar, g: &Geometry, idx: usize, fill_hu: i16) -> i16 {
    let p = (g.center(g.coords(idx)) - placed.shift).to_array();
    let q = Point3::from_array(p.map(|x| x / placed.scale));
    let dg = placed.donor_ct.geometry();
    dg.checked_index(dg.voxel_of(q)).map_or(fill_hu, |src| placed.donor_ct.values()[src])
}

/// What a correction run did, for logging and plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionLog {
    pub initial: ConstraintReport,
    pub final_report: ConstraintReport,
    pub vars: CorrectionVars,
    /// Summed unaligned sDSC of both organs against their assembled shapes.
    pub objective: f64,
    pub first_feasible_objective: Option<f64>,
    pub evaluations: usize,
    pub generations: usize,
    pub applied: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Correction {
    pub phantom: Phantom,
    pub vars: CorrectionVars,
    pub log: CorrectionLog,
}

fn fidelity(ph: &Phantom, reference: &Phantom, tau: f64) -> Result<f64> {
    Ok(sdsc(&ph.liver, &reference.liver, tau, false)? + sdsc(&ph.spleen, &reference.spleen, tau, false)?)
}

/// Repairs an infeasible phantom by searching organ scales and shifts that
/// satisfy every constraint while staying closest to the assembled shapes.
/// Feasible phantoms come back unchanged with identity vars.
pub fn correct(ph: &Phantom, cfg: &AicConfig) -> Result<Correction> {
    cfg.validate()?;
    let masks = ConstraintMasks::new(ph, cfg)?;
    let initial = masks.report(&ph.liver, &ph.spleen)?;
    if initial.is_feasible() {
        let vars = CorrectionVars::identity();
        let log = CorrectionLog {
            initial,
            final_report: initial,
            vars,
            objective: fidelity(ph, ph, cfg.tau)?,
            first_feasible_objective: None,
            evaluations: 0,
            generations: 0,
            applied: false,
        };
        return Ok(Correction { phantom: ph.clone(), vars, log });
    }

    let mut problem = Problem::new(ph, &masks, cfg)?;
    let settings = EdaSettings {
        population: cfg.population,
        max_evaluations: cfg.max_evaluations,
        seed: cfg.seed,
        patience: STALL_GENERATIONS,
    };
    let out = eda::run(&settings, &problem.identity_point(), |pop| problem.evaluate(pop));
    if !out.fitness.is_feasible() {
        return Err(AicError::NoFeasibleSolution { best_violation: out.fitness.violation, evaluations: out.evaluations });
    }
    let vars = problem.decode(&out.best);
    let mut fixed = apply_vars(ph, &vars)?;
    let final_report = masks.report(&fixed.liver, &fixed.spleen)?;
    if !final_report.is_feasible() {
        return Err(AicError::NoFeasibleSolution { best_violation: final_report.total, evaluations: out.evaluations });
    }
    fixed.aic_applied = true;
    let log = CorrectionLog {
        initial,
        final_report,
        vars,
        objective: fidelity(&fixed, ph, cfg.tau)?,
        first_feasible_objective: out.first_feasible,
        evaluations: out.evaluations,
        generations: out.generations,
        applied: true,
    };
    Ok(Correction { phantom: fixed, vars, log })
}

/// A rescaled organ: occupied and surface voxel coordinates, ascending by
/// linear index.
struct Scaled {
    voxels: Vec<[i64; 3]>,
    surface: Vec<[i64; 3]>,
}

struct OarProblem {
    base: Mask,
    reference: SurfaceReference,
    cache: HashMap<i64, Arc<Scaled>>,
}

/// Fast evaluation of candidate vars. Scaled organs are cached per scale step
/// and shifts are whole voxels, so each candidate only re-indexes cached
/// voxel lists; results equal those of `apply_vars` followed by the checks.
struct Problem {
    geom: Geometry,
    cord: Vec<bool>,
    body: Vec<bool>,
    oars: [OarProblem; 2],
    scale_keys: (i64, i64),
    max_steps: [i64; 3],
    min_scale: f64,
    max_scale: f64,
    max_shift: f64,
}

impl Problem {
    fn new(ph: &Phantom, masks: &ConstraintMasks, cfg: &AicConfig) -> Result<Self> {
        let geom = ph.ct.geometry().clone();
        let oar = |m: &Mask| -> Result<OarProblem> {
            Ok(OarProblem { base: m.clone(), reference: SurfaceReference::new(m, cfg.tau)?, cache: HashMap::new() })
        };
        let lo = (cfg.min_volume_scale * SCALE_STEPS - 1e-9).ceil() as i64;
        let hi = (cfg.max_volume_scale * SCALE_STEPS + 1e-9).floor() as i64;
        let max_steps = geom.spacing.map(|s| (cfg.max_shift_mm / s + 1e-9).floor() as i64);
        Ok(Problem {
            cord: masks.cord.occupancy().to_vec(),
            body: masks.body.occupancy().to_vec(),
            oars: [oar(&ph.liver)?, oar(&ph.spleen)?],
            geom,
            scale_keys: (lo, hi),
            max_steps,
            min_scale: cfg.min_volume_scale,
            max_scale: cfg.max_volume_scale,
            max_shift: cfg.max_shift_mm,
        })
    }

    fn identity_point(&self) -> Vec<f64> {
        let u = (1.0 - self.min_scale) / (self.max_scale - self.min_scale).max(f64::MIN_POSITIVE);
        let one = [u.clamp(0.0, 1.0), 0.5, 0.5, 0.5];
        [one, one].concat()
    }

    /// Unit-cube point to (scale step, voxel shift) per organ.
    fn decode_steps(&self, x: &[f64]) -> [(i64, [i64; 3]); 2] {
        let one = |u: &[f64]| {
            let scale = self.min_scale + u[0] * (self.max_scale - self.min_scale);
            let key = ((scale * SCALE_STEPS).round() as i64).clamp(self.scale_keys.0, self.scale_keys.1);
            let mut steps = [0i64; 3];
            for a in 0..3 {
                let d = -self.max_shift + 2.0 * self.max_shift * u[1 + a];
                let m = self.max_steps[a];
                steps[a] = ((d / self.geom.spacing[a]).round() as i64).clamp(-m, m);
            }
            (key, steps)
        };
        [one(&x[0..4]), one(&x[4..8])]
    }

    fn decode(&self, x: &[f64]) -> CorrectionVars {
        let [l, s] = self.decode_steps(x);
        let vars = |(key, steps): (i64, [i64; 3])| OarVars {
            volume_scale: key as f64 / SCALE_STEPS,
            shift: Point3::from_array([0, 1, 2].map(|a| steps[a] as f64 * self.geom.spacing[a])),
        };
        CorrectionVars { liver: vars(l), spleen: vars(s) }
    }

    fn fill_cache(&mut self, steps: &[[(i64, [i64; 3]); 2]]) -> Result<()> {
        for o in 0..2 {
            let missing: BTreeSet<i64> =
                steps.iter().map(|s| s[o].0).filter(|k| !self.oars[o].cache.contains_key(k)).collect();
            let base = &self.oars[o].base;
            let built: Vec<(i64, Result<Scaled>)> = missing
                .into_par_iter()
                .map(|key| {
                    let scaled = scale_mask(base, key as f64 / SCALE_STEPS).map_err(AicError::from).and_then(|m| {
                        let g = m.geometry();
                        let voxels = m.occupied().map(|i| g.coords(i).map(|c| c as i64)).collect();
                        let surface = if m.is_empty() {
                            Vec::new()
                        } else {
                            surface_indices(&m)?.into_iter().map(|c| c.map(|v| v as i64)).collect()
                        };
                        Ok(Scaled { voxels, surface })
                    });
                    (key, scaled)
                })
                .collect();
            for (key, s) in built {
                self.oars[o].cache.insert(key, Arc::new(s?));
            }
        }
        Ok(())
    }

    fn evaluate(&mut self, pop: &[Vec<f64>]) -> Vec<Fitness> {
        let steps: Vec<_> = pop.iter().map(|x| self.decode_steps(x)).collect();
        if self.fill_cache(&steps).is_err() {
            return vec![Fitness::infeasible(usize::MAX); pop.len()];
        }
        let me = &*self;
        steps.par_iter().map(|s| me.fitness(s)).collect()
    }

    fn fitness(&self, steps: &[(i64, [i64; 3]); 2]) -> Fitness {
        let dims = self.geom.dims.map(|d| d as i64);
        let mut placed: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
        let mut on_edge = [false; 2];
        let mut violation = 0usize;
        for o in 0..2 {
            let (key, k) = steps[o];
            let scaled = &self.oars[o].cache[&key];
            placed[o].reserve(scaled.voxels.len());
            for c in &scaled.voxels {
                let t = [c[0] + k[0], c[1] + k[1], c[2] + k[2]];
                if (0..3).any(|a| t[a] < 0 || t[a] >= dims[a]) {
                    // Clipped voxels would silently vanish from the organ.
                    violation += 1;
                    continue;
                }
                if (0..3).any(|a| t[a] == 0 || t[a] == dims[a] - 1) {
                    on_edge[o] = true;
                }
                let idx = self.geom.index(t[0] as usize, t[1] as usize, t[2] as usize);
                violation += self.cord[idx] as usize + !self.body[idx] as usize;
                placed[o].push(idx);
            }
        }
        violation += sorted_overlap(&placed[0], &placed[1]);
        if violation > 0 {
            return Fitness::infeasible(violation);
        }
        let mut objective = 0.0;
        for o in 0..2 {
            let (key, k) = steps[o];
            let op = &self.oars[o];
            objective += if on_edge[o] {
                let mut m = Mask::empty(self.geom.clone());
                placed[o].iter().for_each(|&i| m.set_index(i, true));
                op.reference.score(&m).unwrap_or(0.0)
            } else {
                let pts = op.cache[&key]
                    .surface
                    .iter()
                    .map(|c| self.geom.center([0, 1, 2].map(|a| (c[a] + k[a]) as usize)).to_array())
                    .collect();
                op.reference.score_points(pts)
            };
        }
        Fitness { violation: 0, objective }
    }
}

fn sorted_overlap(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}
