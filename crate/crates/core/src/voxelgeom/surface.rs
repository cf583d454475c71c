use std::collections::HashMap;

use super::{center_of_mass, Mask, Point3, Result, VoxelError};

/// Boundary voxel centers of a mask, in mm.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePointSet {
    pub points: Vec<Point3>,
}

/// Occupied voxels with at least one unoccupied 6-neighbour (the grid edge
/// counts as unoccupied), in ascending linear-index order.
pub fn surface_indices(m: &Mask) -> Result<Vec<[usize; 3]>> {
    let g = m.geometry();
    let [nx, ny, nz] = g.dims;
    let occ = m.occupancy();
    let mut out = Vec::new();
    for idx in m.occupied() {
        let [i, j, k] = g.coords(idx);
        let boundary = i == 0
            || i + 1 == nx
            || j == 0
            || j + 1 == ny
            || k == 0
            || k + 1 == nz
            || !occ[idx - 1]
            || !occ[idx + 1]
            || !occ[idx - nx]
            || !occ[idx + nx]
            || !occ[idx - nx * ny]
            || !occ[idx + nx * ny];
        if boundary {
            out.push([i, j, k]);
        }
    }
    if out.is_empty() {
        return Err(VoxelError::EmptyMask);
    }
    Ok(out)
}

pub fn surface_voxels(m: &Mask) -> Result<SurfacePointSet> {
    let g = m.geometry();
    let points = surface_indices(m)?.into_iter().map(|c| g.center(c)).collect();
    Ok(SurfacePointSet { points })
}

fn check_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && tau > 0.0 {
        Ok(())
    } else {
        Err(VoxelError::InvalidTolerance(tau))
    }
}

/// Surface points of both masks expressed in one comparison frame, together
/// with the distance threshold valid in that frame.
struct Frame {
    a: Vec<[f64; 3]>,
    b: Vec<[f64; 3]>,
    threshold: f64,
}

fn index_sums(m: &Mask) -> ([i128; 3], i128) {
    let g = m.geometry();
    let mut s = [0i128; 3];
    let mut n = 0i128;
    for idx in m.occupied() {
        let c = g.coords(idx);
        for a in 0..3 {
            s[a] += c[a] as i128;
        }
        n += 1;
    }
    (s, n)
}

fn frame(a: &Mask, b: &Mask, tau: f64, align: bool) -> Result<Frame> {
    let sa = surface_indices(a)?;
    let sb = surface_indices(b)?;
    let ga = a.geometry();
    let gb = b.geometry();
    if align && ga.spacing == gb.spacing {
        // Offsets from each center of mass kept as integers over the common
        // denominator n_a * n_b, so alignment never rounds.
        let (sum_a, n_a) = index_sums(a);
        let (sum_b, n_b) = index_sums(b);
        let sp = ga.spacing;
        let rel = |c: &[usize; 3], sum: &[i128; 3], n: i128, other_n: i128| -> [f64; 3] {
            let mut out = [0.0; 3];
            for ax in 0..3 {
                out[ax] = ((n * c[ax] as i128 - sum[ax]) * other_n) as f64 * sp[ax];
            }
            out
        };
        let pa = sa.iter().map(|c| rel(c, &sum_a, n_a, n_b)).collect();
        let pb = sb.iter().map(|c| rel(c, &sum_b, n_b, n_a)).collect();
        return Ok(Frame { a: pa, b: pb, threshold: tau * (n_a * n_b) as f64 });
    }
    let (ca, cb) = if align {
        (center_of_mass(a)?, center_of_mass(b)?)
    } else {
        (Point3::ZERO, Point3::ZERO)
    };
    let pa = sa.iter().map(|&c| (ga.center(c) - ca).to_array()).collect();
    let pb = sb.iter().map(|&c| (gb.center(c) - cb).to_array()).collect();
    Ok(Frame { a: pa, b: pb, threshold: tau })
}

#[inline]
fn within(p: &[f64; 3], q: &[f64; 3], thr2: f64) -> bool {
    let dx = p[0] - q[0];
    let dy = p[1] - q[1];
    let dz = p[2] - q[2];
    dx * dx + dy * dy + dz * dz <= thr2
}

/// Bucketed point set answering "is any point within the threshold of p".
struct Buckets {
    points: Vec<[f64; 3]>,
    cell: f64,
    thr2: f64,
    lo: [i64; 3],
    dims: [i64; 3],
    layout: Layout,
}

enum Layout {
    Dense { start: Vec<u32>, order: Vec<u32> },
    Sparse(HashMap<[i64; 3], Vec<u32>>),
}

const DENSE_CELL_LIMIT: i64 = 1 << 22;

impl Buckets {
    fn new(points: Vec<[f64; 3]>, threshold: f64) -> Self {
        // Slightly oversized cells: any pair within the threshold sits in
        // adjacent cells even after rounding of the division.
        let cell = threshold * (1.0 + 1e-6);
        let key = |p: &[f64; 3]| [(p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64, (p[2] / cell).floor() as i64];
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        for p in &points {
            let k = key(p);
            for a in 0..3 {
                lo[a] = lo[a].min(k[a]);
                hi[a] = hi[a].max(k[a]);
            }
        }
        let dims = [hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1];
        let ncells = dims[0].checked_mul(dims[1]).and_then(|v| v.checked_mul(dims[2]));
        let layout = match ncells {
            Some(nc) if nc <= DENSE_CELL_LIMIT.max(4 * points.len() as i64) => {
                let nc = nc as usize;
                let cell_of = |p: &[f64; 3]| {
                    let k = key(p);
                    ((k[0] - lo[0]) + dims[0] * ((k[1] - lo[1]) + dims[1] * (k[2] - lo[2]))) as usize
                };
                let mut start = vec![0u32; nc + 1];
                for p in &points {
                    start[cell_of(p) + 1] += 1;
                }
                for c in 0..nc {
                    start[c + 1] += start[c];
                }
                let mut fill = start.clone();
                let mut order = vec![0u32; points.len()];
                for (i, p) in points.iter().enumerate() {
                    let c = cell_of(p);
                    order[fill[c] as usize] = i as u32;
                    fill[c] += 1;
                }
                Layout::Dense { start, order }
            }
            _ => {
                let mut map: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
                for (i, p) in points.iter().enumerate() {
                    map.entry(key(p)).or_default().push(i as u32);
                }
                Layout::Sparse(map)
            }
        };
        Buckets { points, cell, thr2: threshold * threshold, lo, dims, layout }
    }

    fn any_within(&self, p: &[f64; 3]) -> bool {
        let k = [
            (p[0] / self.cell).floor() as i64,
            (p[1] / self.cell).floor() as i64,
            (p[2] / self.cell).floor() as i64,
        ];
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let c = [k[0] + dx, k[1] + dy, k[2] + dz];
                    let hit = match &self.layout {
                        Layout::Dense { start, order } => {
                            let r = [c[0] - self.lo[0], c[1] - self.lo[1], c[2] - self.lo[2]];
                            if (0..3).any(|a| r[a] < 0 || r[a] >= self.dims[a]) {
                                continue;
                            }
                            let cell = (r[0] + self.dims[0] * (r[1] + self.dims[1] * r[2])) as usize;
                            order[start[cell] as usize..start[cell + 1] as usize]
                                .iter()
                                .any(|&q| within(p, &self.points[q as usize], self.thr2))
                        }
                        Layout::Sparse(map) => map
                            .get(&c)
                            .is_some_and(|v| v.iter().any(|&q| within(p, &self.points[q as usize], self.thr2))),
                    };
                    if hit {
                        return true;
                    }
                }
            }
        }
        false
    }
}

fn count_within(points: &[[f64; 3]], targets: &Buckets) -> usize {
    points.iter().filter(|p| targets.any_within(p)).count()
}

/// Surface Dice-Sørensen coefficient (percentage) at tolerance `tau` mm.
///
/// Surfaces are the 6-connected boundary voxel centers of each mask. With
/// `align` set, `b` is translated so both centers of mass coincide; when the
/// two lattices share spacing the alignment is carried out in exact integer
/// arithmetic, which makes the score symmetric and invariant to whole-voxel
/// or origin translations of either input.
pub fn sdsc(a: &Mask, b: &Mask, tau: f64, align: bool) -> Result<f64> {
    check_tau(tau)?;
    let f = frame(a, b, tau, align)?;
    let (na, nb) = (f.a.len(), f.b.len());
    let ba = Buckets::new(f.a, f.threshold);
    let bb = Buckets::new(f.b, f.threshold);
    let hits = count_within(&ba.points, &bb) + count_within(&bb.points, &ba);
    Ok(100.0 * hits as f64 / (na + nb) as f64)
}

/// Repeated unaligned sDSC comparisons against one fixed reference mask.
pub struct SurfaceReference {
    reference: Buckets,
    tau: f64,
}

impl SurfaceReference {
    pub fn new(reference: &Mask, tau: f64) -> Result<Self> {
        check_tau(tau)?;
        let g = reference.geometry();
        let points = surface_indices(reference)?.into_iter().map(|c| g.center(c).to_array()).collect();
        Ok(SurfaceReference { reference: Buckets::new(points, tau), tau })
    }

    /// Equals `sdsc(other, reference, tau, false)`.
    pub fn score(&self, other: &Mask) -> Result<f64> {
        let g = other.geometry();
        let pts = surface_indices(other)?.into_iter().map(|c| g.center(c).to_array()).collect();
        Ok(self.score_points(pts))
    }

    /// Score against a surface given directly as voxel-center points.
    pub fn score_points(&self, points: Vec<[f64; 3]>) -> f64 {
        let n = points.len() + self.reference.points.len();
        if points.is_empty() {
            return 0.0;
        }
        let other = Buckets::new(points, self.tau);
        let hits = count_within(&other.points, &self.reference) + count_within(&self.reference.points, &other);
        100.0 * hits as f64 / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxelgeom::{translate_mask_voxels, Geometry};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geom(n: usize) -> Geometry {
        Geometry::new([n, n, n], [1.0; 3], [0.0; 3]).unwrap()
    }

    fn blob(g: &Geometry, rng: &mut ChaCha8Rng) -> Mask {
        let c = [rng.random_range(3.0..9.0), rng.random_range(3.0..9.0), rng.random_range(3.0..9.0)];
        let r = rng.random_range(1.5..4.5f64);
        Mask::from_fn(g.clone(), |p| {
            let d: f64 = (0..3).map(|a| (p[a] as f64 - c[a]).powi(2)).sum();
            d <= r * r || rng.random::<f64>() < 0.02
        })
    }

    #[test]
    fn surface_counts_for_cubes() {
        let g = geom(9);
        let one = Mask::from_fn(g.clone(), |c| c == [4, 4, 4]);
        let s = surface_voxels(&one).unwrap();
        assert_eq!(s.points, vec![g.center([4, 4, 4])]);
        let c3 = Mask::from_fn(g.clone(), |c| c.iter().all(|&x| (2..5).contains(&x)));
        assert_eq!(surface_indices(&c3).unwrap().len(), 26);
        let c5 = Mask::from_fn(g.clone(), |c| c.iter().all(|&x| (2..7).contains(&x)));
        assert_eq!(surface_indices(&c5).unwrap().len(), 98);
        assert_eq!(surface_indices(&Mask::empty(g)), Err(VoxelError::EmptyMask));
    }

    #[test]
    fn edge_voxels_are_surface() {
        let g = geom(3);
        let full = Mask::from_fn(g, |_| true);
        assert_eq!(surface_indices(&full).unwrap().len(), 26);
    }

    #[test]
    fn sdsc_basic_cases() {
        let g = Geometry::new([60, 4, 4], [2.0, 1.0, 1.0], [0.0; 3]).unwrap();
        let a = Mask::from_fn(g.clone(), |c| c == [0, 1, 1]);
        let b = Mask::from_fn(g.clone(), |c| c == [50, 1, 1]);
        assert_eq!(sdsc(&a, &b, 5.0, false).unwrap(), 0.0);
        assert_eq!(sdsc(&a, &b, 5.0, true).unwrap(), 100.0);
        assert_eq!(sdsc(&a, &a, 0.1, false).unwrap(), 100.0);
        assert_eq!(sdsc(&a, &b, 0.0, false), Err(VoxelError::InvalidTolerance(0.0)));
        assert_eq!(sdsc(&a, &Mask::empty(g), 1.0, false), Err(VoxelError::EmptyMask));
    }

    #[test]
    fn sdsc_symmetric_and_translation_invariant_when_aligned() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = geom(14);
        for _ in 0..20 {
            let a = blob(&g, &mut rng);
            let b = blob(&g, &mut rng);
            let ab = sdsc(&a, &b, 2.0, true).unwrap();
            assert_eq!(ab, sdsc(&b, &a, 2.0, true).unwrap());
            let (bt, rep) = translate_mask_voxels(&b, [1, -1, 2]);
            if rep.clipped == 0 {
                assert_eq!(ab, sdsc(&a, &bt, 2.0, true).unwrap());
            }
        }
    }

    #[test]
    fn reference_matches_sdsc() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = geom(14);
        for _ in 0..10 {
            let a = blob(&g, &mut rng);
            let b = blob(&g, &mut rng);
            let r = SurfaceReference::new(&b, 3.0).unwrap();
            assert_eq!(r.score(&a).unwrap(), sdsc(&a, &b, 3.0, false).unwrap());
        }
    }

    #[test]
    fn tiny_tolerance_uses_sparse_buckets() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = geom(14);
        let a = blob(&g, &mut rng);
        assert_eq!(sdsc(&a, &a, 1e-7, false).unwrap(), 100.0);
    }
}
