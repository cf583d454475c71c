//! Synthetic pediatric abdomen cohorts with known ground truth.
//!
//! Features are drawn around a shared size factor and clamped to realistic
//! pediatric ranges. Abdominal diameters and organ measurements are read as
//! centimetres when turned into anatomy. OAR positions relative to L2 follow
//! the linear laws of [`PlantedModel`]; spleen size grows exponentially with
//! age.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Axis, Cohort, CohortError, Oar, PatientFeatures, PatientId, PatientRecord, Result, N_FEATURES};
use crate::voxelgeom::{center_of_mass, translate_mask_voxels, Geometry, Mask, Point3, VoxelGrid};

pub const AGE: usize = 0;
pub const ADAP: usize = 1;
pub const ADLR: usize = 2;
pub const ICSC: usize = 3;
pub const GEND: usize = 4;
pub const HESZ: usize = 5;
pub const HEIG: usize = 6;
pub const LDLR: usize = 7;
pub const RDLR: usize = 8;
pub const RDIS: usize = 9;
pub const SPIS: usize = 10;
pub const WEIG: usize = 11;

/// Per-feature (min, max, mean, sd, loading on the shared size factor).
/// GEND is handled separately.
const FEATURE_STATS: [(f64, f64, f64, f64, f64); N_FEATURES] = [
    (2.0, 6.0, 3.8, 1.2, 0.85),
    (11.1, 16.0, 13.3, 1.2, 0.6),
    (16.3, 23.5, 19.4, 1.4, 0.7),
    (4.3, 6.8, 5.5, 0.6, 0.5),
    (0.0, 1.0, 0.45, 0.5, 0.0),
    (6.8, 9.9, 8.5, 0.7, 0.6),
    (86.0, 123.0, 103.0, 10.7, 0.9),
    (6.5, 10.7, 8.4, 0.9, 0.5),
    (6.2, 10.5, 8.3, 0.8, 0.5),
    (4.0, 7.8, 5.9, 1.0, 0.1),
    (7.0, 10.9, 9.3, 0.8, 0.7),
    (10.0, 28.0, 16.4, 3.7, 0.85),
];

/// Range a synthetic feature is clamped to.
pub fn feature_bounds(index: usize) -> (f64, f64) {
    (FEATURE_STATS[index].0, FEATURE_STATS[index].1)
}

/// `intercept + sum(coef * feature)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearLaw {
    pub intercept: f64,
    pub terms: Vec<(usize, f64)>,
}

impl LinearLaw {
    pub fn eval(&self, f: &PatientFeatures) -> f64 {
        let x = f.to_array();
        self.terms.iter().fold(self.intercept, |acc, &(i, c)| acc + c * x[i])
    }
}

/// Latent coefficient table of the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedModel {
    /// L2-relative OAR center of mass in mm, indexed `[oar][axis]`.
    pub positions: [[LinearLaw; 3]; 2],
    /// Spleen size is `spleen_base_mm * (SPIS / 9.3) * exp(spleen_age_rate * (AGE - 3.8))`.
    pub spleen_base_mm: f64,
    pub spleen_age_rate: f64,
}

impl Default for PlantedModel {
    fn default() -> Self {
        let law = |intercept: f64, terms: &[(usize, f64)]| LinearLaw { intercept, terms: terms.to_vec() };
        PlantedModel {
            positions: [
                [
                    law(3.0 * 8.3, &[(ADLR, -2.25), (RDLR, -3.0)]),
                    law(0.0, &[(ADAP, 2.2)]),
                    law(-6.0 * 5.9, &[(SPIS, 4.0), (RDIS, 6.0)]),
                ],
                [
                    law(-2.5 * 8.4, &[(ADLR, 2.1), (LDLR, 2.5)]),
                    law(-10.0 + 3.0 * 8.5, &[(ADAP, 1.5), (HESZ, -3.0)]),
                    law(-3.0 * 5.9, &[(SPIS, 4.5), (RDIS, 3.0)]),
                ],
            ],
            spleen_base_mm: 14.0,
            spleen_age_rate: 0.2,
        }
    }
}

impl PlantedModel {
    /// Noise-free L2-relative position of an OAR along an axis, in mm.
    pub fn offset(&self, f: &PatientFeatures, oar: Oar, axis: Axis) -> f64 {
        self.positions[oar as usize][axis.index()].eval(f)
    }

    pub fn offset3(&self, f: &PatientFeatures, oar: Oar) -> Point3 {
        Point3::new(self.offset(f, oar, Axis::LR), self.offset(f, oar, Axis::AP), self.offset(f, oar, Axis::IS))
    }

    pub fn spleen_size(&self, f: &PatientFeatures) -> f64 {
        self.spleen_base_mm * (f.spis / 9.3) * (self.spleen_age_rate * (f.age - 3.8)).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub seed: u64,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub model: PlantedModel,
    /// Standard deviation of the per-axis OAR position noise, mm.
    pub position_noise_mm: f64,
    /// Relative standard deviation of OAR and body semi-axes.
    pub shape_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_patients: 60,
            seed: 0,
            dims: [64, 44, 60],
            spacing: [4.0; 3],
            model: PlantedModel::default(),
            position_noise_mm: 2.0,
            shape_noise: 0.04,
        }
    }
}

impl SynthConfig {
    pub fn new(n_patients: usize, seed: u64) -> Self {
        SynthConfig { n_patients, seed, ..Default::default() }
    }

    /// Coarse 6 mm grid covering the same field of view; for quick tests.
    pub fn small(n_patients: usize, seed: u64) -> Self {
        SynthConfig { n_patients, seed, dims: [44, 30, 40], spacing: [6.0; 3], ..Default::default() }
    }

    pub fn noiseless(mut self) -> Self {
        self.position_noise_mm = 0.0;
        self.shape_noise = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |s: String| Err(CohortError::InvalidConfig(s));
        if self.n_patients < 4 {
            return bad(format!("n_patients must be at least 4, got {}", self.n_patients));
        }
        if !(self.position_noise_mm >= 0.0 && self.position_noise_mm.is_finite()) {
            return bad(format!("position noise must be >= 0, got {}", self.position_noise_mm));
        }
        if !(self.shape_noise >= 0.0 && self.shape_noise < 0.5) {
            return bad(format!("shape noise must be in [0, 0.5), got {}", self.shape_noise));
        }
        self.geometry().map(|_| ())
    }

    /// Grid centered on the origin in LR and AP, IS starting at -extent/2.
    pub fn geometry(&self) -> Result<Geometry> {
        let origin = [0, 1, 2].map(|a| -0.5 * self.dims[a] as f64 * self.spacing[a]);
        Ok(Geometry::new(self.dims, self.spacing, origin)?)
    }
}

const HU_AIR: i16 = -1000;
const HU_SOFT: i16 = 40;
const HU_LIVER: i16 = 62;
const HU_SPLEEN: i16 = 48;
const HU_CORD: i16 = 30;
const HU_BONE: i16 = 450;

/// Sample features for one patient.
fn sample_features(rng: &mut ChaCha8Rng) -> PatientFeatures {
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let size: f64 = std.sample(rng);
    let mut v = [0.0; N_FEATURES];
    for (i, &(lo, hi, mean, sd, load)) in FEATURE_STATS.iter().enumerate() {
        if i == GEND {
            continue;
        }
        let e: f64 = std.sample(rng);
        let z = load * size + (1.0 - load * load).sqrt() * e;
        v[i] = ((mean + sd * z).clamp(lo, hi) * 10.0).round() / 10.0;
    }
    v[GEND] = if rng.random::<f64>() < 0.45 { 1.0 } else { 0.0 };
    PatientFeatures::from_array(v)
}

/// Features of `n` synthetic patients without generating any anatomy.
pub fn sample_feature_table(n: usize, seed: u64) -> Vec<PatientFeatures> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sample_features(&mut rng)).collect()
}

#[derive(Debug, Clone, Copy)]
struct Ellipsoid {
    center: Point3,
    radii: [f64; 3],
}

impl Ellipsoid {
    fn contains(&self, p: Point3) -> bool {
        let d = (p - self.center).to_array();
        d.iter().zip(&self.radii).map(|(x, r)| (x / r) * (x / r)).sum::<f64>() <= 1.0
    }
}

fn rasterize(geom: &Geometry, parts: &[Ellipsoid]) -> Mask {
    Mask::from_fn(geom.clone(), |c| {
        let p = geom.center(c);
        parts.iter().any(|e| e.contains(p))
    })
}

/// Liver: a right lobe plus a smaller left lobe extending medially.
fn liver_parts(f: &PatientFeatures, center: Point3, jitter: [f64; 3]) -> Vec<Ellipsoid> {
    let r = [4.5 * f.rdlr * jitter[0], 2.5 * f.adap * jitter[1], (3.0 * f.spis + 3.0 * f.rdis) * jitter[2]];
    let left = Ellipsoid {
        center: center + Point3::new(0.9 * r[0], 0.2 * r[1], 0.3 * r[2]),
        radii: [0.6 * r[0], 0.55 * r[1], 0.5 * r[2]],
    };
    vec![Ellipsoid { center, radii: r }, left]
}

fn spleen_parts(model: &PlantedModel, f: &PatientFeatures, center: Point3, jitter: [f64; 3]) -> Vec<Ellipsoid> {
    let s = model.spleen_size(f);
    vec![Ellipsoid { center, radii: [1.0 * s * jitter[0], 1.5 * s * jitter[1], 2.0 * s * jitter[2]] }]
}

/// Rasterizes an organ so its center of mass lands on `target`: the shape is
/// re-centered twice continuously, then snapped by whole voxels.
fn place_organ(geom: &Geometry, target: Point3, build: impl Fn(Point3) -> Vec<Ellipsoid>) -> Result<Mask> {
    let mut center = target;
    let mut mask = rasterize(geom, &build(center));
    for _ in 0..2 {
        if mask.is_empty() {
            break;
        }
        center = center + (target - center_of_mass(&mask)?);
        mask = rasterize(geom, &build(center));
    }
    if mask.is_empty() {
        return Ok(mask);
    }
    let delta = (target - center_of_mass(&mask)?).to_array();
    let shift = [0, 1, 2].map(|a| (delta[a] / geom.spacing[a]).round() as i64);
    Ok(translate_mask_voxels(&mask, shift).0)
}

fn touches_border(m: &Mask) -> bool {
    let g = m.geometry();
    match m.bbox() {
        None => false,
        Some((lo, hi)) => (0..3).any(|a| lo[a] == 0 || hi[a] + 1 == g.dims[a]),
    }
}

fn generate_patient(cfg: &SynthConfig, geom: &Geometry, id: PatientId, rng: &mut ChaCha8Rng) -> Result<PatientRecord> {
    let features = sample_features(rng);
    let fail = |reason: String| CohortError::GenerationFailure { id, reason };
    let pos_noise = Normal::new(0.0, cfg.position_noise_mm.max(f64::MIN_POSITIVE)).expect("finite sd");
    let shape_noise = Normal::new(0.0, cfg.shape_noise.max(f64::MIN_POSITIVE)).expect("finite sd");
    let jitter3 = |rng: &mut ChaCha8Rng| {
        if cfg.shape_noise == 0.0 {
            [1.0; 3]
        } else {
            [0; 3].map(|_| (1.0 + shape_noise.sample(rng)).max(0.5))
        }
    };
    let body_jitter = jitter3(rng);
    let liver_jitter = jitter3(rng);
    let spleen_jitter = jitter3(rng);
    let noise = |rng: &mut ChaCha8Rng| {
        if cfg.position_noise_mm == 0.0 {
            Point3::ZERO
        } else {
            Point3::new(pos_noise.sample(rng), pos_noise.sample(rng), pos_noise.sample(rng))
        }
    };
    let liver_noise = noise(rng);
    let spleen_noise = noise(rng);

    // Body: elliptic cylinder tapering by 10% towards the pelvis.
    let semi_lr = 5.0 * features.adlr * body_jitter[0];
    let semi_ap = 5.0 * features.adap * body_jitter[1];
    let length = 20.0 * features.spis * body_jitter[2];
    let is_lo = geom.origin[2] + 2.5 * geom.spacing[2];
    let is_hi = is_lo + length;
    let l2 = Point3::new(0.0, -0.55 * semi_ap, is_lo + 0.5 * length);
    let cord_center = |is: f64| Point3::new(0.0, l2.ap - 16.0, is);

    let body = Mask::from_fn(geom.clone(), |c| {
        let p = geom.center(c);
        if p.is < is_lo || p.is > is_hi {
            return false;
        }
        let taper = 0.9 + 0.1 * (p.is - is_lo) / length;
        let x = p.lr / (semi_lr * taper);
        let y = p.ap / (semi_ap * taper);
        x * x + y * y <= 1.0
    });
    let cord = Mask::from_fn(geom.clone(), |c| {
        let p = geom.center(c);
        let d = p - cord_center(p.is);
        body.get(c[0], c[1], c[2]) && d.lr * d.lr + d.ap * d.ap <= 5.0 * 5.0
    });

    let liver_target = l2 + cfg.model.offset3(&features, Oar::Liver) + liver_noise;
    let spleen_target = l2 + cfg.model.offset3(&features, Oar::Spleen) + spleen_noise;
    let liver = place_organ(geom, liver_target, |c| liver_parts(&features, c, liver_jitter))?;
    let spleen = place_organ(geom, spleen_target, |c| spleen_parts(&cfg.model, &features, c, spleen_jitter))?;

    for (name, m) in [("body", &body), ("liver", &liver), ("spleen", &spleen)] {
        if m.is_empty() {
            return Err(fail(format!("{name} is empty on the grid")));
        }
        if touches_border(m) && name != "body" {
            return Err(fail(format!("{name} is clipped by the grid")));
        }
    }
    if touches_border(&body) {
        let (lo, hi) = body.bbox().expect("non-empty");
        if (0..2).any(|a| lo[a] == 0 || hi[a] + 1 == geom.dims[a]) {
            return Err(fail("body is clipped by the grid".into()));
        }
    }
    for (name, m) in [("liver", &liver), ("spleen", &spleen)] {
        if m.count() >= body.count() {
            return Err(fail(format!("{name} is not smaller than the body")));
        }
    }

    let mut values = vec![HU_AIR; geom.len()];
    for (idx, v) in values.iter_mut().enumerate() {
        if !body.get_index(idx) {
            continue;
        }
        let p = geom.center(geom.coords(idx));
        let d = p - Point3::new(0.0, l2.ap, p.is);
        let texture: i16 = rng.random_range(-8..=8);
        *v = if cord.get_index(idx) {
            HU_CORD
        } else if d.lr * d.lr + d.ap * d.ap <= 11.0 * 11.0 {
            HU_BONE
        } else if liver.get_index(idx) {
            HU_LIVER
        } else if spleen.get_index(idx) {
            HU_SPLEEN
        } else {
            HU_SOFT
        } + texture;
    }
    // Organs may poke out of the body; they still carry organ intensities.
    for idx in liver.occupied() {
        if !body.get_index(idx) {
            values[idx] = HU_LIVER;
        }
    }
    for idx in spleen.occupied() {
        if !body.get_index(idx) && !liver.get_index(idx) {
            values[idx] = HU_SPLEEN;
        }
    }
    let ct = VoxelGrid::new(geom.clone(), values)?;

    Ok(PatientRecord { id, features, ct, body, liver, spleen, cord, l2_center: l2, extended_body: None })
}

/// Deterministic cohort for `cfg.seed`, patient ids `1..=n_patients`.
pub fn gen_synthetic_cohort(cfg: &SynthConfig) -> Result<Cohort> {
    cfg.validate()?;
    let geom = cfg.geometry()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::with_capacity(cfg.n_patients);
    for n in 0..cfg.n_patients {
        records.push(generate_patient(cfg, &geom, PatientId(n as u32 + 1), &mut rng)?);
    }
    Cohort::new(records)
}

/// Copy of patient `source` (features and anatomy) under a new id.
pub fn plant_clone(cohort: &Cohort, source: PatientId, new_id: PatientId) -> Result<PatientRecord> {
    let mut r = cohort
        .get(source)
        .ok_or_else(|| CohortError::InvalidRecord { id: source, reason: "not in cohort".into() })?
        .clone();
    r.id = new_id;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::position_target;

    #[test]
    fn same_seed_same_cohort() {
        let a = gen_synthetic_cohort(&SynthConfig::small(4, 11)).unwrap();
        let b = gen_synthetic_cohort(&SynthConfig::small(4, 11)).unwrap();
        assert_eq!(a, b);
        let c = gen_synthetic_cohort(&SynthConfig::small(4, 12)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noiseless_targets_follow_the_planted_law() {
        let cfg = SynthConfig::new(6, 3).noiseless();
        let c = gen_synthetic_cohort(&cfg).unwrap();
        for r in c.records() {
            for oar in Oar::ALL {
                for axis in Axis::ALL {
                    let got = position_target(r, oar, axis).unwrap();
                    let want = cfg.model.offset(&r.features, oar, axis);
                    assert!((got - want).abs() <= 0.5 * cfg.spacing[axis.index()] + 1e-9, "{oar:?} {axis:?} {got} {want}");
                }
            }
        }
    }

    #[test]
    fn sixty_patients_satisfy_invariants() {
        let cfg = SynthConfig::small(60, 5);
        let c = gen_synthetic_cohort(&cfg).unwrap();
        assert_eq!(c.len(), 60);
        for r in c.records() {
            r.validate().unwrap();
            for (i, v) in r.features.to_array().into_iter().enumerate() {
                let (lo, hi) = feature_bounds(i);
                assert!((lo..=hi).contains(&v));
            }
            assert!(r.liver.count() < r.body.count());
            assert!(!r.cord.is_empty());
        }
    }

    #[test]
    fn features_share_a_size_factor() {
        let c = gen_synthetic_cohort(&SynthConfig::small(60, 9)).unwrap();
        let col = |i: usize| c.records().iter().map(|r| r.features.to_array()[i]).collect::<Vec<_>>();
        let corr = |a: &[f64], b: &[f64]| {
            let n = a.len() as f64;
            let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
            let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
            let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
            let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
            cov / (va * vb).sqrt()
        };
        assert!(corr(&col(AGE), &col(HEIG)) > 0.5);
        assert!(corr(&col(HEIG), &col(WEIG)) > 0.5);
        assert!(corr(&col(RDIS), &col(HEIG)).abs() < 0.4);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(matches!(gen_synthetic_cohort(&SynthConfig::small(3, 0)), Err(CohortError::InvalidConfig(_))));
        let mut cfg = SynthConfig::small(4, 0);
        cfg.position_noise_mm = -1.0;
        assert!(gen_synthetic_cohort(&cfg).is_err());
        let mut tiny = SynthConfig::small(4, 0);
        tiny.dims = [10, 10, 10];
        assert!(matches!(gen_synthetic_cohort(&tiny), Err(CohortError::GenerationFailure { .. })));
    }

    #[test]
    fn clone_keeps_anatomy() {
        let c = gen_synthetic_cohort(&SynthConfig::small(4, 1)).unwrap();
        let r = plant_clone(&c, PatientId(2), PatientId(50)).unwrap();
        assert_eq!(r.id, PatientId(50));
        assert_eq!(r.liver, c.get(PatientId(2)).unwrap().liver);
    }
}
