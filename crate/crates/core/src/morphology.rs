//! Grain identification and shape statistics.

use std::collections::VecDeque;

use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{DomainSpec, GrainField, LIQUID};
use crate::error::{Error, Result};
use crate::thermal::MeltMask;

/// Grains smaller than this are left out of aspect-ratio means.
pub const DEFAULT_MIN_VOLUME_UM3: f64 = 500.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    /// Face neighbours.
    #[default]
    Six,
    /// Face, edge and corner neighbours.
    TwentySix,
}

impl Connectivity {
    pub fn from_count(n: usize) -> Result<Self> {
        match n {
            6 => Ok(Self::Six),
            26 => Ok(Self::TwentySix),
            _ => Err(Error::invalid(format!("connectivity must be 6 or 26, got {n}"))),
        }
    }

    fn offsets(self) -> Vec<[i64; 3]> {
        let mut out = Vec::new();
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    let keep = match self {
                        Self::Six => manhattan == 1,
                        Self::TwentySix => manhattan > 0,
                    };
                    if keep {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grain {
    pub orientation: i32,
    /// Flat voxel indices in BFS discovery order.
    pub voxels: Vec<usize>,
    pub volume_um3: f64,
    /// Equivalent-ellipsoid semi-axes, a >= b >= c.
    pub axes_um: [f64; 3],
    pub aspect_ratio: f64,
}

/// Maximal connected components of equal non-liquid label, optionally
/// restricted to the voxels flagged in `mask`. Grains are ordered by their
/// lowest voxel index.
pub fn label_grains(field: &GrainField, mask: Option<&MeltMask>, connectivity: Connectivity) -> Result<Vec<Grain>> {
    let spec = *field.spec();
    if let Some(m) = mask {
        if m.spec().dims != spec.dims {
            return Err(Error::invalid("mask and field dims differ"));
        }
    }
    let components = components(&spec, field.labels(), mask.map(|m| m.melted()), connectivity);
    Ok(components
        .into_par_iter()
        .map(|voxels| {
            let orientation = field.labels()[voxels[0]];
            let axes_um = ellipsoid_axes(&spec, &voxels);
            Grain {
                orientation,
                volume_um3: voxels.len() as f64 * spec.voxel_volume_um3(),
                aspect_ratio: aspect_ratio(axes_um),
                axes_um,
                voxels,
            }
        })
        .collect())
}

fn components(spec: &DomainSpec, labels: &[i32], mask: Option<&[bool]>, connectivity: Connectivity) -> Vec<Vec<usize>> {
    let offsets = connectivity.offsets();
    let [nx, ny, nz] = spec.dims.map(|d| d as i64);
    let inside = |v: usize| labels[v] != LIQUID && mask.is_none_or(|m| m[v]);
    let mut seen = vec![false; labels.len()];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..labels.len() {
        if seen[start] || !inside(start) {
            continue;
        }
        let label = labels[start];
        seen[start] = true;
        queue.push_back(start);
        let mut voxels = Vec::new();
        while let Some(v) = queue.pop_front() {
            voxels.push(v);
            let [x, y, z] = spec.coords(v).map(|c| c as i64);
            for o in &offsets {
                let (ax, ay, az) = (x + o[0], y + o[1], z + o[2]);
                if ax < 0 || ay < 0 || az < 0 || ax >= nx || ay >= ny || az >= nz {
                    continue;
                }
                let u = (ax + nx * (ay + ny * az)) as usize;
                if !seen[u] && labels[u] == label && inside(u) {
                    seen[u] = true;
                    queue.push_back(u);
                }
            }
        }
        out.push(voxels);
    }
    out
}

/// Semi-axes (a >= b >= c, um) of the ellipsoid with the same second moments
/// as the voxel set, each voxel treated as a solid cube.
///
/// Moments are accumulated exactly in integers relative to the first voxel,
/// so the result does not depend on where the grain sits in the domain.
pub fn equivalent_ellipsoid(spec: &DomainSpec, voxels: &[usize]) -> Result<[f64; 3]> {
    if voxels.is_empty() {
        return Err(Error::invalid("grain has no voxels"));
    }
    Ok(ellipsoid_axes(spec, voxels))
}

fn ellipsoid_axes(spec: &DomainSpec, voxels: &[usize]) -> [f64; 3] {
    let origin = spec.coords(voxels[0]).map(|c| c as i64);
    let mut s1 = [0i128; 3];
    let mut s2 = [[0i128; 3]; 3];
    for &v in voxels {
        let c = spec.coords(v);
        let r = [0, 1, 2].map(|k| (c[k] as i64 - origin[k]) as i128);
        for i in 0..3 {
            s1[i] += r[i];
            for j in i..3 {
                s2[i][j] += r[i] * r[j];
            }
        }
    }
    let n = voxels.len() as i128;
    let n2 = (n * n) as f64;
    let h2 = spec.voxel_um * spec.voxel_um;
    let mut cov = Matrix3::zeros();
    for i in 0..3 {
        for j in i..3 {
            let num = n * s2[i][j] - s1[i] * s1[j];
            let mut c = num as f64 / n2 * h2;
            if i == j {
                c += h2 / 12.0;
            }
            cov[(i, j)] = c;
            cov[(j, i)] = c;
        }
    }
    let diagonal = cov[(0, 1)] == 0.0 && cov[(0, 2)] == 0.0 && cov[(1, 2)] == 0.0;
    let mut eig = if diagonal {
        [cov[(0, 0)], cov[(1, 1)], cov[(2, 2)]]
    } else {
        let e = SymmetricEigen::new(cov).eigenvalues;
        [e[0], e[1], e[2]]
    };
    eig.sort_by(|a, b| b.total_cmp(a));
    eig.map(|l| (5.0 * l.max(0.0)).sqrt())
}

/// `2a / (b + c)`.
pub fn aspect_ratio(axes: [f64; 3]) -> f64 {
    2.0 * axes[0] / (axes[1] + axes[2])
}

/// Fixed-bin histogram. Values outside the edge range are counted in the
/// first or last bin so the counts always sum to the number of values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl BinSpec {
    pub const ASPECT: BinSpec = BinSpec { lo: 1.0, hi: 6.0, bins: 25 };
    pub const VOLUME_UM3: BinSpec = BinSpec { lo: 0.0, hi: 50_000.0, bins: 25 };

    pub fn edges(&self) -> Vec<f64> {
        let w = (self.hi - self.lo) / self.bins as f64;
        (0..=self.bins).map(|i| self.lo + w * i as f64).collect()
    }
}

impl Histogram {
    pub fn new(bins: BinSpec, values: impl IntoIterator<Item = f64>) -> Self {
        let edges = bins.edges();
        let mut counts = vec![0usize; bins.bins];
        let w = (bins.hi - bins.lo) / bins.bins as f64;
        for v in values {
            let i = ((v - bins.lo) / w).floor();
            let i = if i.is_nan() { 0 } else { (i.max(0.0) as usize).min(bins.bins - 1) };
            counts[i] += 1;
        }
        Self { edges, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            s.push_str(&format!("{},{},{}\n", self.edges[i], self.edges[i + 1], c));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorphologyStats {
    pub grain_count: usize,
    /// Grains at or above the volume threshold.
    pub included_count: usize,
    /// Mean over all grains; zero when there are none.
    pub mean_volume_um3: f64,
    /// Mean over included grains; `None` when no grain passes the threshold.
    pub mean_aspect_ratio: Option<f64>,
    pub volume_histogram: Histogram,
    pub aspect_histogram: Histogram,
}

/// Mean volume over all grains, mean aspect ratio over grains of at least
/// `min_volume_um3`. The volume histogram covers all grains, the aspect
/// histogram the included ones.
pub fn stats(grains: &[Grain], min_volume_um3: f64) -> MorphologyStats {
    stats_with_bins(grains, min_volume_um3, BinSpec::VOLUME_UM3, BinSpec::ASPECT)
}

pub fn stats_with_bins(grains: &[Grain], min_volume_um3: f64, volume_bins: BinSpec, aspect_bins: BinSpec) -> MorphologyStats {
    let included: Vec<&Grain> = grains.iter().filter(|g| g.volume_um3 >= min_volume_um3).collect();
    let mean_volume_um3 = if grains.is_empty() {
        0.0
    } else {
        grains.iter().map(|g| g.volume_um3).sum::<f64>() / grains.len() as f64
    };
    let mean_aspect_ratio = if included.is_empty() {
        None
    } else {
        Some(included.iter().map(|g| g.aspect_ratio).sum::<f64>() / included.len() as f64)
    };
    MorphologyStats {
        grain_count: grains.len(),
        included_count: included.len(),
        mean_volume_um3,
        mean_aspect_ratio,
        volume_histogram: Histogram::new(volume_bins, grains.iter().map(|g| g.volume_um3)),
        aspect_histogram: Histogram::new(aspect_bins, included.iter().map(|g| g.aspect_ratio)),
    }
}

impl MorphologyStats {
    pub fn to_csv(&self) -> String {
        format!(
            "grain_count,included_count,mean_volume_um3,mean_aspect_ratio\n{},{},{},{}\n",
            self.grain_count,
            self.included_count,
            self.mean_volume_um3,
            self.mean_aspect_ratio.map_or(String::new(), |a| a.to_string())
        )
    }
}

/// Root-mean-square error of `a` against the reference `b`, and the RMSE
/// normalized by the range of `b`.
pub fn compare(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid(format!(
            "series must have equal non-zero length, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    let rmse = mse.sqrt();
    let (lo, hi) = b.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let range = hi - lo;
    if range == 0.0 {
        return Err(Error::UndefinedNormalization);
    }
    Ok((rmse, rmse / range))
}

/// [`compare`] on two unpaired distributions: both are sorted in descending
/// order and paired by rank, truncated to the shorter one.
pub fn compare_sorted(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| y.total_cmp(x));
    b.sort_by(|x, y| y.total_cmp(x));
    let n = a.len().min(b.len());
    compare(&a[..n], &b[..n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn field(dims: [usize; 3], labels: Vec<i32>, n_ori: usize) -> GrainField {
        GrainField::from_labels(DomainSpec::from_dims(dims, 1.0).unwrap(), n_ori, labels).unwrap()
    }

    #[test]
    fn disjoint_blobs_are_separate_grains() {
        let mut labels = vec![1; 7];
        labels[3] = 0;
        let g = label_grains(&field([7, 1, 1], labels, 2), None, Connectivity::Six).unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g.iter().filter(|g| g.orientation == 1).count(), 2);
    }

    #[test]
    fn checkerboard_is_all_singletons() {
        let dims = [4, 4, 4];
        let labels = (0..64).map(|v| ((v % 4) + (v / 4 % 4) + (v / 16)) % 2).collect();
        let f = field(dims, labels, 2);
        assert_eq!(label_grains(&f, None, Connectivity::Six).unwrap().len(), 64);
        assert_eq!(label_grains(&f, None, Connectivity::TwentySix).unwrap().len(), 2);
    }

    #[test]
    fn mask_and_liquid_excluded() {
        let mut labels = vec![0; 8];
        labels[0] = LIQUID;
        let f = field([8, 1, 1], labels, 1);
        let mut flags = vec![true; 8];
        flags[4] = false;
        let mask = MeltMask::from_flags(*f.spec(), flags);
        let g = label_grains(&f, Some(&mask), Connectivity::Six).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].voxels.len() + g[1].voxels.len(), 6);
    }

    #[test]
    fn single_voxel_is_a_sphere() {
        let spec = DomainSpec::from_dims([3, 3, 3], 2.0).unwrap();
        let axes = equivalent_ellipsoid(&spec, &[13]).unwrap();
        assert_eq!(aspect_ratio(axes), 1.0);
        assert!((axes[0] - (5.0f64 / 12.0).sqrt() * 2.0).abs() < 1e-12);
    }

    #[test]
    fn box_recovers_continuum_ratio() {
        let spec = DomainSpec::from_dims([24, 12, 12], 1.5).unwrap();
        let mut voxels = Vec::new();
        for z in 1..11 {
            for y in 1..11 {
                for x in 2..22 {
                    voxels.push(spec.index(x, y, z));
                }
            }
        }
        let axes = equivalent_ellipsoid(&spec, &voxels).unwrap();
        assert!((aspect_ratio(axes) - 2.0).abs() < 1e-12);
        // semi-axis of a box side L is sqrt(5 L^2 / 12)
        assert!((axes[0] - (5.0 * 30.0f64.powi(2) / 12.0).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn rotated_grain_has_same_axes() {
        let spec = DomainSpec::from_dims([10, 10, 10], 1.0).unwrap();
        let pts = [[1, 2, 3], [2, 2, 3], [3, 2, 3], [3, 3, 3], [3, 4, 4], [4, 4, 5]];
        let a: Vec<usize> = pts.iter().map(|p| spec.index(p[0], p[1], p[2])).collect();
        let b: Vec<usize> = pts.iter().map(|p| spec.index(p[2], p[0], p[1])).collect();
        let ea = equivalent_ellipsoid(&spec, &a).unwrap();
        let eb = equivalent_ellipsoid(&spec, &b).unwrap();
        for k in 0..3 {
            assert!((ea[k] - eb[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn axes_scale_with_voxel_size() {
        let s1 = DomainSpec::from_dims([6, 6, 6], 1.0).unwrap();
        let s2 = DomainSpec::from_dims([6, 6, 6], 3.0).unwrap();
        let v = [0, 1, 7, 8, 43, 50];
        let a = equivalent_ellipsoid(&s1, &v).unwrap();
        let b = equivalent_ellipsoid(&s2, &v).unwrap();
        for k in 0..3 {
            assert!((b[k] - 3.0 * a[k]).abs() < 1e-9);
        }
    }

    fn grain(volume: f64, ar: f64) -> Grain {
        Grain {
            orientation: 0,
            voxels: vec![0],
            volume_um3: volume,
            axes_um: [ar, 1.0, 1.0],
            aspect_ratio: ar,
        }
    }

    #[test]
    fn threshold_filters_aspect_mean_only() {
        let s = stats(&[grain(1000.0, 2.0)], 500.0);
        assert_eq!((s.mean_volume_um3, s.mean_aspect_ratio), (1000.0, Some(2.0)));
        let s = stats(&[grain(400.0, 5.0), grain(600.0, 1.5)], 500.0);
        assert_eq!(s.mean_volume_um3, 500.0);
        assert_eq!(s.mean_aspect_ratio, Some(1.5));
        assert_eq!(s.volume_histogram.total(), 2);
        assert_eq!(s.aspect_histogram.total(), 1);
        let s = stats(&[], 500.0);
        assert_eq!(s.grain_count, 0);
        assert!(s.volume_histogram.counts.iter().all(|&c| c == 0));
        assert!(s.aspect_histogram.counts.iter().all(|&c| c == 0));
    }

    #[test]
    fn compare_examples() {
        assert_eq!(compare(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), (0.0, 0.0));
        assert!(matches!(compare(&[2.0, 4.0], &[0.0, 0.0]), Err(Error::UndefinedNormalization)));
        let (r, n) = compare(&[1.0, 2.0, 3.0], &[1.0, 2.0, 5.0]).unwrap();
        assert!((r - (4.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((n - (4.0f64 / 3.0).sqrt() / 4.0).abs() < 1e-12);
        assert!(compare(&[1.0], &[1.0, 2.0]).is_err());
        let (r, _) = compare_sorted(&[3.0, 1.0, 2.0], &[2.0, 3.0, 1.0]).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn full_labelling_conserves_volume() {
        let spec = DomainSpec::from_dims([9, 7, 5], 2.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let labels = (0..spec.len()).map(|_| rng.gen_range(0..3)).collect();
        let f = GrainField::from_labels(spec, 3, labels).unwrap();
        let grains = label_grains(&f, None, Connectivity::Six).unwrap();
        let total: f64 = grains.iter().map(|g| g.volume_um3).sum();
        assert!((total - spec.volume_um3()).abs() < 1e-6);
    }
}
