//! Voxel volumes, binary masks, rigid/scaling transforms and segmentation
//! similarity metrics.
//!
//! Index convention: `index = i + nx * (j + ny * k)`, with axis 0 running
//! Left-Right, axis 1 Anterior-Posterior and axis 2 Inferior-Superior.
//! Voxel `(i, j, k)` has its center at `origin + (index + 0.5) * spacing`.

mod surface;
pub mod vph1;

use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use surface::{sdsc, surface_indices, surface_voxels, SurfacePointSet, SurfaceReference};

/// Soft abdominal tissue intensity written into resected organ voxels.
pub const DEFAULT_FILL_HU: i16 = 78;

/// Volume-factor bounds accepted by [`scale_mask`].
pub const MIN_VOLUME_FACTOR: f64 = 0.25;
pub const MAX_VOLUME_FACTOR: f64 = 1.25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VoxelError {
    #[error("mask is empty")]
    EmptyMask,
    #[error("surface tolerance must be positive and finite, got {0}")]
    InvalidTolerance(f64),
    #[error("volumes do not share the same geometry")]
    GeometryMismatch,
    #[error("volume factor {0} outside [0.25, 1.25]")]
    InvalidScale(f64),
    #[error("transplant placed no voxel inside the receiver grid")]
    TransplantClipped,
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("buffer holds {got} values, geometry needs {expected}")]
    BufferLength { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, VoxelError>;

/// A physical position in mm (Left-Right, Anterior-Posterior, Inferior-Superior).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub lr: f64,
    pub ap: f64,
    pub is: f64,
}

impl Point3 {
    pub const ZERO: Point3 = Point3 { lr: 0.0, ap: 0.0, is: 0.0 };

    pub fn new(lr: f64, ap: f64, is: f64) -> Self {
        Point3 { lr, ap, is }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Point3::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.lr, self.ap, self.is]
    }

    pub fn axis(self, axis: usize) -> f64 {
        self.to_array()[axis]
    }

    pub fn is_finite(self) -> bool {
        self.lr.is_finite() && self.ap.is_finite() && self.is.is_finite()
    }

    pub fn norm(self) -> f64 {
        (self.lr * self.lr + self.ap * self.ap + self.is * self.is).sqrt()
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.lr + o.lr, self.ap + o.ap, self.is + o.is)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.lr - o.lr, self.ap - o.ap, self.is - o.is)
    }
}

/// Shape and placement of a voxel lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(VoxelError::InvalidGeometry(format!("zero dimension in {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(VoxelError::InvalidGeometry(format!("non-positive spacing {spacing:?}")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(VoxelError::InvalidGeometry(format!("non-finite origin {origin:?}")));
        }
        dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .ok_or_else(|| VoxelError::InvalidGeometry(format!("voxel count overflows for {dims:?}")))?;
        Ok(Geometry { dims, spacing, origin })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    /// Linear index for signed coordinates, `None` when outside the lattice.
    #[inline]
    pub fn checked_index(&self, c: [i64; 3]) -> Option<usize> {
        for a in 0..3 {
            if c[a] < 0 || c[a] >= self.dims[a] as i64 {
                return None;
            }
        }
        Some(self.index(c[0] as usize, c[1] as usize, c[2] as usize))
    }

    pub fn center(&self, c: [usize; 3]) -> Point3 {
        Point3::new(
            self.origin[0] + (c[0] as f64 + 0.5) * self.spacing[0],
            self.origin[1] + (c[1] as f64 + 0.5) * self.spacing[1],
            self.origin[2] + (c[2] as f64 + 0.5) * self.spacing[2],
        )
    }

    /// Index of the voxel containing physical point `p` (nearest voxel center).
    pub fn voxel_of(&self, p: Point3) -> [i64; 3] {
        let p = p.to_array();
        let mut out = [0i64; 3];
        for a in 0..3 {
            out[a] = ((p[a] - self.origin[a]) / self.spacing[a]).floor() as i64;
        }
        out
    }

    /// Physical extent of the lattice along each axis, in mm.
    pub fn extent(&self) -> [f64; 3] {
        [
            self.dims[0] as f64 * self.spacing[0],
            self.dims[1] as f64 * self.spacing[1],
            self.dims[2] as f64 * self.spacing[2],
        ]
    }

    pub fn contains(&self, p: Point3) -> bool {
        let p = p.to_array();
        let e = self.extent();
        (0..3).all(|a| p[a] >= self.origin[a] && p[a] <= self.origin[a] + e[a])
    }

    fn ensure_same(&self, other: &Geometry) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(VoxelError::GeometryMismatch)
        }
    }
}

/// Scalar CT volume in Hounsfield units.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    geom: Geometry,
    values: Vec<i16>,
}

impl VoxelGrid {
    pub fn new(geom: Geometry, values: Vec<i16>) -> Result<Self> {
        if values.len() != geom.len() {
            return Err(VoxelError::BufferLength { expected: geom.len(), got: values.len() });
        }
        Ok(VoxelGrid { geom, values })
    }

    pub fn filled(geom: Geometry, value: i16) -> Self {
        let n = geom.len();
        VoxelGrid { geom, values: vec![value; n] }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn values(&self) -> &[i16] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [i16] {
        &mut self.values
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> i16 {
        self.values[self.geom.index(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: i16) {
        let idx = self.geom.index(i, j, k);
        self.values[idx] = v;
    }
}

/// Binary segmentation on a voxel lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    geom: Geometry,
    occ: Vec<bool>,
}

impl Mask {
    pub fn new(geom: Geometry, occ: Vec<bool>) -> Result<Self> {
        if occ.len() != geom.len() {
            return Err(VoxelError::BufferLength { expected: geom.len(), got: occ.len() });
        }
        Ok(Mask { geom, occ })
    }

    pub fn empty(geom: Geometry) -> Self {
        let n = geom.len();
        Mask { geom, occ: vec![false; n] }
    }

    /// Builds a mask by evaluating `f` at every voxel coordinate.
    pub fn from_fn(geom: Geometry, mut f: impl FnMut([usize; 3]) -> bool) -> Self {
        let mut occ = vec![false; geom.len()];
        for (idx, o) in occ.iter_mut().enumerate() {
            *o = f(geom.coords(idx));
        }
        Mask { geom, occ }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occ
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.occ[self.geom.index(i, j, k)]
    }

    #[inline]
    pub fn get_index(&self, idx: usize) -> bool {
        self.occ[idx]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: bool) {
        let idx = self.geom.index(i, j, k);
        self.occ[idx] = v;
    }

    #[inline]
    pub fn set_index(&mut self, idx: usize, v: bool) {
        self.occ[idx] = v;
    }

    pub fn count(&self) -> usize {
        self.occ.iter().filter(|&&o| o).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.occ.iter().any(|&o| o)
    }

    /// Linear indices of occupied voxels in ascending order.
    pub fn occupied(&self) -> impl Iterator<Item = usize> + '_ {
        self.occ.iter().enumerate().filter_map(|(i, &o)| o.then_some(i))
    }

    /// Inclusive index bounding box of the occupied voxels.
    pub fn bbox(&self) -> Option<([usize; 3], [usize; 3])> {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        for idx in self.occupied() {
            let c = self.geom.coords(idx);
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
            any = true;
        }
        any.then_some((lo, hi))
    }

    /// Voxel-wise union; geometries must match.
    pub fn union(&self, other: &Mask) -> Result<Mask> {
        self.geom.ensure_same(&other.geom)?;
        let occ = self.occ.iter().zip(&other.occ).map(|(&a, &b)| a || b).collect();
        Ok(Mask { geom: self.geom.clone(), occ })
    }

    /// Mean voxel index (continuous, voxel centers at integers).
    fn mean_index(&self) -> Result<[f64; 3]> {
        let mut sum = [0u64; 3];
        let mut n = 0u64;
        for idx in self.occupied() {
            let c = self.geom.coords(idx);
            for a in 0..3 {
                sum[a] += c[a] as u64;
            }
            n += 1;
        }
        if n == 0 {
            return Err(VoxelError::EmptyMask);
        }
        Ok([sum[0] as f64 / n as f64, sum[1] as f64 / n as f64, sum[2] as f64 / n as f64])
    }
}

/// Unweighted mean of occupied voxel centers, in mm.
pub fn center_of_mass(m: &Mask) -> Result<Point3> {
    let mean = m.mean_index()?;
    let g = &m.geom;
    Ok(Point3::new(
        g.origin[0] + (mean[0] + 0.5) * g.spacing[0],
        g.origin[1] + (mean[1] + 0.5) * g.spacing[1],
        g.origin[2] + (mean[2] + 0.5) * g.spacing[2],
    ))
}

/// Volumetric Dice-Sørensen coefficient as a percentage.
pub fn dsc(a: &Mask, b: &Mask) -> Result<f64> {
    a.geom.ensure_same(&b.geom)?;
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.occ.iter().zip(&b.occ) {
        na += x as usize;
        nb += y as usize;
        both += (x && y) as usize;
    }
    if na + nb == 0 {
        return Err(VoxelError::EmptyMask);
    }
    Ok(100.0 * 2.0 * both as f64 / (na + nb) as f64)
}

/// `|a ∩ b|`.
pub fn overlap_count(a: &Mask, b: &Mask) -> Result<usize> {
    a.geom.ensure_same(&b.geom)?;
    Ok(a.occ.iter().zip(&b.occ).filter(|(&x, &y)| x && y).count())
}

/// `|oar \ body|`.
pub fn outside_count(oar: &Mask, body: &Mask) -> Result<usize> {
    oar.geom.ensure_same(&body.geom)?;
    Ok(oar.occ.iter().zip(&body.occ).filter(|(&x, &y)| x && !y).count())
}

/// Number of voxels lost off the grid edge by a transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClipReport {
    pub clipped: usize,
}

/// Whole-voxel shift equivalent to a physical displacement.
pub fn snap_shift(geom: &Geometry, delta: Point3) -> [i64; 3] {
    let d = delta.to_array();
    [
        (d[0] / geom.spacing[0]).round() as i64,
        (d[1] / geom.spacing[1]).round() as i64,
        (d[2] / geom.spacing[2]).round() as i64,
    ]
}

/// Shifts occupancy by `round(delta / spacing)` voxels; voxels leaving the
/// grid are dropped and counted.
pub fn translate_mask(m: &Mask, delta: Point3) -> (Mask, ClipReport) {
    translate_mask_voxels(m, snap_shift(&m.geom, delta))
}

pub fn translate_mask_voxels(m: &Mask, shift: [i64; 3]) -> (Mask, ClipReport) {
    if shift == [0, 0, 0] {
        return (m.clone(), ClipReport::default());
    }
    let g = &m.geom;
    let mut out = Mask::empty(g.clone());
    let mut clipped = 0;
    for idx in m.occupied() {
        let c = g.coords(idx);
        let t = [c[0] as i64 + shift[0], c[1] as i64 + shift[1], c[2] as i64 + shift[2]];
        match g.checked_index(t) {
            Some(ti) => out.occ[ti] = true,
            None => clipped += 1,
        }
    }
    (out, ClipReport { clipped })
}

/// Uniform rescale about the mask's center of mass so that its volume changes
/// by `volume_factor`, nearest-neighbour resampled onto the same grid.
///
/// The linear factor starts at `volume_factor^(1/3)` and is refined so the
/// resampled voxel count lands as close as the lattice allows to
/// `volume_factor * |m|`.
pub fn scale_mask(m: &Mask, volume_factor: f64) -> Result<Mask> {
    if !(MIN_VOLUME_FACTOR..=MAX_VOLUME_FACTOR).contains(&volume_factor) {
        return Err(VoxelError::InvalidScale(volume_factor));
    }
    scale_mask_volume(m, volume_factor)
}

/// [`scale_mask`] without the organ volume bounds; any positive factor.
pub fn scale_mask_volume(m: &Mask, volume_factor: f64) -> Result<Mask> {
    if !(volume_factor.is_finite() && volume_factor > 0.0) {
        return Err(VoxelError::InvalidScale(volume_factor));
    }
    if volume_factor == 1.0 {
        return Ok(m.clone());
    }
    let com = m.mean_index()?;
    // Resampling about the voxel center nearest the COM gives odd extents,
    // about the COM itself typically even ones; both are searched.
    let snapped = [(com[0] + 0.5).floor(), (com[1] + 0.5).floor(), (com[2] + 0.5).floor()];
    let target = volume_factor * m.count() as f64;
    let nominal = volume_factor.cbrt();
    let mut best: Option<(f64, Mask)> = None;
    for center in [com, snapped] {
        let (mut lo, mut hi) = (nominal * 0.85, nominal * 1.15);
        let mut linear = nominal;
        for _ in 0..13 {
            let cand = resample_scaled(m, center, linear);
            let n = cand.count() as f64;
            let err = (n - target).abs();
            if best.as_ref().is_none_or(|(e, _)| err < *e) {
                best = Some((err, cand));
            }
            if n < target {
                lo = linear;
            } else {
                hi = linear;
            }
            linear = 0.5 * (lo + hi);
        }
    }
    Ok(best.expect("at least one candidate").1)
}

/// Rescale by a linear factor per axis about the center of mass, without the
/// volume-factor bounds of [`scale_mask`].
pub fn scale_mask_linear(m: &Mask, linear: f64) -> Result<Mask> {
    if !(linear.is_finite() && linear > 0.0) {
        return Err(VoxelError::InvalidScale(linear.powi(3)));
    }
    let center = m.mean_index()?;
    if linear == 1.0 {
        return Ok(m.clone());
    }
    Ok(resample_scaled(m, center, linear))
}

fn resample_scaled(m: &Mask, center: [f64; 3], linear: f64) -> Mask {
    let g = &m.geom;
    let mut out = Mask::empty(g.clone());
    let Some((lo, hi)) = m.bbox() else {
        return out;
    };
    let mut tlo = [0usize; 3];
    let mut thi = [0usize; 3];
    for a in 0..3 {
        let l = center[a] + (lo[a] as f64 - 0.5 - center[a]) * linear;
        let h = center[a] + (hi[a] as f64 + 0.5 - center[a]) * linear;
        tlo[a] = (l.floor() as i64 - 1).clamp(0, g.dims[a] as i64 - 1) as usize;
        thi[a] = (h.ceil() as i64 + 1).clamp(0, g.dims[a] as i64 - 1) as usize;
    }
    let inv = 1.0 / linear;
    for k in tlo[2]..=thi[2] {
        let sk = (center[2] + (k as f64 - center[2]) * inv).round() as i64;
        for j in tlo[1]..=thi[1] {
            let sj = (center[1] + (j as f64 - center[1]) * inv).round() as i64;
            for i in tlo[0]..=thi[0] {
                let si = (center[0] + (i as f64 - center[0]) * inv).round() as i64;
                if let Some(src) = g.checked_index([si, sj, sk]) {
                    if m.occ[src] {
                        let dst = g.index(i, j, k);
                        out.occ[dst] = true;
                    }
                }
            }
        }
    }
    out
}

/// Overwrites the voxels under `oar` with `fill_hu`.
pub fn resect(ct: &VoxelGrid, oar: &Mask, fill_hu: i16) -> Result<VoxelGrid> {
    ct.geom.ensure_same(&oar.geom)?;
    let mut out = ct.clone();
    for idx in oar.occupied() {
        out.values[idx] = fill_hu;
    }
    Ok(out)
}

/// Result of placing a donor organ into a receiver volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Transplant {
    pub ct: VoxelGrid,
    pub mask: Mask,
    /// Physical displacement actually applied to the donor voxels.
    pub shift: Point3,
    pub clipped: usize,
}

/// Displacement that moves the donor's center of mass onto `target_com`,
/// snapped so donor voxel centers land on receiver voxel centers when both
/// lattices share spacing.
pub fn placement_shift(receiver: &Geometry, donor: &Geometry, donor_com: Point3, target_com: Point3) -> Point3 {
    let delta = (target_com - donor_com).to_array();
    let mut out = delta;
    if receiver.spacing == donor.spacing {
        for a in 0..3 {
            let offset = receiver.origin[a] - donor.origin[a];
            let s = receiver.spacing[a];
            out[a] = offset + s * ((delta[a] - offset) / s).round();
        }
    }
    Point3::from_array(out)
}

/// Donor voxel feeding receiver position `p` under displacement `shift`.
#[inline]
pub fn donor_voxel(donor: &Geometry, p: Point3, shift: Point3) -> Option<usize> {
    donor.checked_index(donor.voxel_of(p - shift))
}

/// Places the donor organ so its center of mass sits at `target_com` and
/// copies donor HU values under the placed mask.
pub fn transplant(ct: &VoxelGrid, donor_ct: &VoxelGrid, donor_mask: &Mask, target_com: Point3) -> Result<Transplant> {
    donor_ct.geom.ensure_same(&donor_mask.geom)?;
    let donor_com = center_of_mass(donor_mask)?;
    let rg = &ct.geom;
    let dg = &donor_mask.geom;
    let shift = placement_shift(rg, dg, donor_com, target_com);

    let (dlo, dhi) = donor_mask.bbox().ok_or(VoxelError::EmptyMask)?;
    let plo = dg.center(dlo) + shift;
    let phi = dg.center(dhi) + shift;
    let vlo = rg.voxel_of(plo);
    let vhi = rg.voxel_of(phi);
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for a in 0..3 {
        let l = (vlo[a] - 1).max(0);
        let h = (vhi[a] + 1).min(rg.dims[a] as i64 - 1);
        if l > h {
            return Err(VoxelError::TransplantClipped);
        }
        lo[a] = l as usize;
        hi[a] = h as usize;
    }

    let mut out_ct = ct.clone();
    let mut mask = Mask::empty(rg.clone());
    let mut placed = 0usize;
    for k in lo[2]..=hi[2] {
        for j in lo[1]..=hi[1] {
            for i in lo[0]..=hi[0] {
                let p = rg.center([i, j, k]);
                if let Some(src) = donor_voxel(dg, p, shift) {
                    if donor_mask.occ[src] {
                        let dst = rg.index(i, j, k);
                        mask.occ[dst] = true;
                        out_ct.values[dst] = donor_ct.values[src];
                        placed += 1;
                    }
                }
            }
        }
    }
    if placed == 0 {
        return Err(VoxelError::TransplantClipped);
    }
    let clipped = donor_mask
        .occupied()
        .filter(|&idx| rg.checked_index(rg.voxel_of(dg.center(dg.coords(idx)) + shift)).is_none())
        .count();
    Ok(Transplant { ct: out_ct, mask, shift, clipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_geom(n: usize) -> Geometry {
        Geometry::new([n, n, n], [1.0; 3], [0.0; 3]).unwrap()
    }

    fn random_mask(g: &Geometry, p: f64, rng: &mut ChaCha8Rng) -> Mask {
        Mask::from_fn(g.clone(), |_| rng.random::<f64>() < p)
    }

    fn cube(g: &Geometry, lo: usize, side: usize) -> Mask {
        Mask::from_fn(g.clone(), |c| c.iter().all(|&x| x >= lo && x < lo + side))
    }

    #[test]
    fn geometry_rejects_bad_input() {
        assert!(Geometry::new([0, 1, 1], [1.0; 3], [0.0; 3]).is_err());
        assert!(Geometry::new([1, 1, 1], [1.0, 0.0, 1.0], [0.0; 3]).is_err());
        assert!(VoxelGrid::new(unit_geom(2), vec![0; 7]).is_err());
    }

    #[test]
    fn com_single_voxel() {
        let g = unit_geom(4);
        let m = Mask::from_fn(g, |c| c == [0, 0, 0]);
        assert_eq!(center_of_mass(&m).unwrap(), Point3::new(0.5, 0.5, 0.5));
    }

    #[test]
    fn com_two_voxels_is_midpoint() {
        let g = Geometry::new([4, 2, 2], [2.0, 1.0, 1.0], [10.0, 0.0, 0.0]).unwrap();
        let m = Mask::from_fn(g.clone(), |c| (c[0] == 0 || c[0] == 2) && c[1] == 1 && c[2] == 0);
        let com = center_of_mass(&m).unwrap();
        let mid = (g.center([0, 1, 0]).lr + g.center([2, 1, 0]).lr) / 2.0;
        assert_eq!(com.lr, mid);
    }

    #[test]
    fn com_matches_index_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = Geometry::new([8, 8, 8], [1.5, 0.7, 2.5], [-3.0, 4.0, 1.0]).unwrap();
        let m = random_mask(&g, 0.3, &mut rng);
        let mut acc = [0.0; 3];
        let mut n = 0.0;
        for k in 0..8 {
            for j in 0..8 {
                for i in 0..8 {
                    if m.get(i, j, k) {
                        let p = g.center([i, j, k]).to_array();
                        for a in 0..3 {
                            acc[a] += p[a];
                        }
                        n += 1.0;
                    }
                }
            }
        }
        let com = center_of_mass(&m).unwrap().to_array();
        for a in 0..3 {
            assert!((com[a] - acc[a] / n).abs() < 1e-9);
        }
    }

    #[test]
    fn com_of_empty_is_error() {
        assert_eq!(center_of_mass(&Mask::empty(unit_geom(3))), Err(VoxelError::EmptyMask));
    }

    #[test]
    fn dsc_cases() {
        let g = unit_geom(6);
        let a = cube(&g, 0, 2);
        assert_eq!(dsc(&a, &a).unwrap(), 100.0);
        let b = cube(&g, 3, 2);
        assert_eq!(dsc(&a, &b).unwrap(), 0.0);
        // |a| = 10 inside |b| = 30
        let b = Mask::from_fn(g.clone(), |c| c[2] == 0 && c[1] < 5 && c[0] < 6);
        let a = Mask::from_fn(g.clone(), |c| c[2] == 0 && c[1] < 5 && c[0] < 2);
        assert_eq!(a.count(), 10);
        assert_eq!(b.count(), 30);
        assert_eq!(dsc(&a, &b).unwrap(), 50.0);
        assert_eq!(dsc(&Mask::empty(g.clone()), &Mask::empty(g.clone())), Err(VoxelError::EmptyMask));
        assert_eq!(dsc(&a, &Mask::empty(unit_geom(5))), Err(VoxelError::GeometryMismatch));
    }

    #[test]
    fn overlap_and_outside_match_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = unit_geom(9);
        for _ in 0..10 {
            let a = random_mask(&g, 0.4, &mut rng);
            let b = random_mask(&g, 0.6, &mut rng);
            let (mut both, mut only_a) = (0, 0);
            for idx in 0..g.len() {
                if a.get_index(idx) && b.get_index(idx) {
                    both += 1;
                }
                if a.get_index(idx) && !b.get_index(idx) {
                    only_a += 1;
                }
            }
            assert_eq!(overlap_count(&a, &b).unwrap(), both);
            assert_eq!(outside_count(&a, &b).unwrap(), only_a);
            assert_eq!(both + only_a, a.count());
        }
        let a = cube(&g, 2, 3);
        assert_eq!(overlap_count(&a, &a).unwrap(), a.count());
        assert_eq!(outside_count(&a, &cube(&g, 1, 6)).unwrap(), 0);
        assert_eq!(outside_count(&a, &Mask::empty(g.clone())).unwrap(), a.count());
    }

    #[test]
    fn translate_identity_and_unit_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Geometry::new([10, 10, 10], [2.0, 1.0, 3.0], [0.0; 3]).unwrap();
        let m = Mask::from_fn(g.clone(), |c| c[0] < 8 && rng.random::<f64>() < 0.3);
        let (same, rep) = translate_mask(&m, Point3::ZERO);
        assert_eq!(same, m);
        assert_eq!(rep.clipped, 0);
        let (shifted, rep) = translate_mask(&m, Point3::new(2.0, 0.0, 0.0));
        assert_eq!(rep.clipped, 0);
        assert_eq!(shifted.count(), m.count());
        for idx in m.occupied() {
            let c = g.coords(idx);
            assert!(shifted.get(c[0] + 1, c[1], c[2]));
        }
    }

    #[test]
    fn translate_moves_com_by_snapped_delta() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = Geometry::new([32, 32, 32], [1.0, 1.5, 2.5], [0.0; 3]).unwrap();
        let m = Mask::from_fn(g.clone(), |c| c.iter().all(|&x| (8..16).contains(&x)) && rng.random::<f64>() < 0.5);
        let delta = Point3::new(10.0, -10.0, 5.0);
        let (t, rep) = translate_mask(&m, delta);
        assert_eq!(rep.clipped, 0);
        let moved = center_of_mass(&t).unwrap() - center_of_mass(&m).unwrap();
        for a in 0..3 {
            assert!((moved.axis(a) - delta.axis(a)).abs() <= g.spacing[a] / 2.0 + 1e-9);
        }
    }

    #[test]
    fn translate_reports_clipping() {
        let g = unit_geom(4);
        let m = cube(&g, 0, 2);
        let (t, rep) = translate_mask(&m, Point3::new(-1.0, 0.0, 0.0));
        assert_eq!(rep.clipped, 4);
        assert_eq!(t.count(), 4);
    }

    #[test]
    fn scale_identity_and_bounds() {
        let g = unit_geom(10);
        let m = cube(&g, 2, 5);
        assert_eq!(scale_mask(&m, 1.0).unwrap(), m);
        assert_eq!(scale_mask(&m, 0.2), Err(VoxelError::InvalidScale(0.2)));
        assert_eq!(scale_mask(&m, 1.3), Err(VoxelError::InvalidScale(1.3)));
    }

    #[test]
    fn scale_cube_volume_and_com() {
        let g = unit_geom(40);
        let m = cube(&g, 10, 20);
        let com = center_of_mass(&m).unwrap();
        for &f in &[0.25, 1.25] {
            let s = scale_mask(&m, f).unwrap();
            let expected = f * 8000.0;
            let got = s.count() as f64;
            assert!((got - expected).abs() <= 0.1 * expected, "factor {f}: {got} vs {expected}");
            let c = center_of_mass(&s).unwrap();
            for a in 0..3 {
                assert!((c.axis(a) - com.axis(a)).abs() <= 0.5 + 1e-9, "factor {f} axis {a}");
            }
        }
    }

    #[test]
    fn resect_replaces_only_masked_voxels() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = unit_geom(8);
        let vals: Vec<i16> = (0..g.len()).map(|_| rng.random_range(-1000..1000)).collect();
        let ct = VoxelGrid::new(g.clone(), vals).unwrap();
        assert_eq!(resect(&ct, &Mask::empty(g.clone()), 78).unwrap(), ct);
        let full = Mask::from_fn(g.clone(), |_| true);
        assert!(resect(&ct, &full, 78).unwrap().values().iter().all(|&v| v == 78));
        let oar = random_mask(&g, 0.3, &mut rng);
        let out = resect(&ct, &oar, DEFAULT_FILL_HU).unwrap();
        let mut changed = 0;
        for idx in 0..g.len() {
            if oar.get_index(idx) {
                assert_eq!(out.values()[idx], 78);
            } else {
                assert_eq!(out.values()[idx], ct.values()[idx]);
            }
            if out.values()[idx] != ct.values()[idx] {
                changed += 1;
            }
        }
        let already_78 = oar.occupied().filter(|&i| ct.values()[i] == 78).count();
        assert_eq!(changed, oar.count() - already_78);
    }

    #[test]
    fn transplant_zero_shift_and_integer_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let g = Geometry::new([12, 12, 12], [2.0, 2.0, 2.0], [5.0, -7.0, 0.0]).unwrap();
        let donor_ct = VoxelGrid::new(g.clone(), (0..g.len()).map(|_| rng.random_range(-200..200)).collect()).unwrap();
        let recv = VoxelGrid::filled(g.clone(), -1000);
        let dm = Mask::from_fn(g.clone(), |c| c.iter().all(|&x| (3..8).contains(&x)) && rng.random::<f64>() < 0.7);
        let com = center_of_mass(&dm).unwrap();
        let t = transplant(&recv, &donor_ct, &dm, com).unwrap();
        assert_eq!(t.mask, dm);
        for idx in dm.occupied() {
            assert_eq!(t.ct.values()[idx], donor_ct.values()[idx]);
        }
        let t2 = transplant(&recv, &donor_ct, &dm, com + Point3::new(4.0, 0.0, -2.0)).unwrap();
        assert_eq!(t2.mask.count(), dm.count());
        assert_eq!(t2.clipped, 0);
        let moved = center_of_mass(&t2.mask).unwrap();
        assert!((moved.lr - com.lr - 4.0).abs() < 1e-9);
        assert!((moved.is - com.is + 2.0).abs() < 1e-9);
    }

    #[test]
    fn transplant_across_geometries_copies_source_hu() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let dg = Geometry::new([10, 10, 10], [2.0, 2.0, 2.0], [0.0; 3]).unwrap();
        let rg = Geometry::new([16, 14, 12], [1.5, 2.0, 2.5], [-4.0, 3.0, 1.0]).unwrap();
        let donor_ct = VoxelGrid::new(dg.clone(), (0..dg.len()).map(|_| rng.random_range(-200..200)).collect()).unwrap();
        let dm = Mask::from_fn(dg.clone(), |c| c.iter().all(|&x| (3..7).contains(&x)));
        let recv = VoxelGrid::filled(rg.clone(), 0);
        let target = Point3::new(8.0, 17.0, 15.0);
        let t = transplant(&recv, &donor_ct, &dm, target).unwrap();
        let com = center_of_mass(&t.mask).unwrap();
        for a in 0..3 {
            assert!((com.axis(a) - target.axis(a)).abs() <= rg.spacing[a], "axis {a}");
        }
        for idx in t.mask.occupied() {
            let p = rg.center(rg.coords(idx)) - t.shift;
            let src = dg.checked_index(dg.voxel_of(p)).unwrap();
            assert!(dm.get_index(src));
            assert_eq!(t.ct.values()[idx], donor_ct.values()[src]);
        }
    }

    #[test]
    fn transplant_fully_clipped_is_error() {
        let g = unit_geom(6);
        let dm = cube(&g, 1, 2);
        let ct = VoxelGrid::filled(g.clone(), 0);
        let r = transplant(&ct, &ct, &dm, Point3::new(100.0, 0.0, 0.0));
        assert_eq!(r.unwrap_err(), VoxelError::TransplantClipped);
        assert_eq!(transplant(&ct, &ct, &Mask::empty(g), Point3::ZERO).unwrap_err(), VoxelError::EmptyMask);
    }

    #[test]
    fn resect_then_transplant_restores_original() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = Geometry::new([14, 12, 10], [1.0, 1.2, 2.5], [3.0, 2.0, 1.0]).unwrap();
        let ct = VoxelGrid::new(g.clone(), (0..g.len()).map(|_| rng.random_range(-1000..1000)).collect()).unwrap();
        let m = Mask::from_fn(g.clone(), |c| c[0] > 2 && c[0] < 10 && c[1] > 3 && rng.random::<f64>() < 0.6);
        let resected = resect(&ct, &m, 78).unwrap();
        let t = transplant(&resected, &ct, &m, center_of_mass(&m).unwrap()).unwrap();
        assert_eq!(t.ct, ct);
        assert_eq!(t.mask, m);
    }
}
