//! Voxel-grid geometry and the grain-orientation field.
//!
//! Every array in the crate uses the same flat layout: x varies fastest, then
//! y, then z (`index = x + nx * (y + ny * z)`). Multi-channel arrays store
//! their channels innermost, so the channel block of voxel `v` starts at
//! `v * channels`.

mod augment;
mod voi;
mod voronoi;
pub mod vgf;

pub use augment::{augment_voi, AxisTransform, AUGMENTATIONS};
pub use voi::{extract_voi, extract_window, write_back_voi, VoiWindow};
pub(crate) use voi::write_back_in_place;
pub use voronoi::{generate_voronoi_microstructure, nearest_seed_brute_force, VoronoiSeeds};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label stored in voxels whose order parameters are all below one half.
pub const LIQUID: i32 = -1;

/// Default orientation-class count.
pub const DEFAULT_N_ORI: usize = 20;

/// Default voxel edge, 1 mm spread over 464 cells.
pub const DEFAULT_VOXEL_UM: f64 = 2.155;

/// Default VOI extent in mm.
pub const DEFAULT_VOI_MM: [f64; 3] = [0.17, 0.17, 0.07];

/// Box-shaped voxel domain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub size_mm: [f64; 3],
    pub voxel_um: f64,
    pub dims: [usize; 3],
}

impl DomainSpec {
    /// Builds a domain from its physical extent, rounding each axis to the
    /// nearest whole voxel count.
    pub fn new(size_mm: [f64; 3], voxel_um: f64) -> Result<Self> {
        if !(voxel_um > 0.0) || !voxel_um.is_finite() {
            return Err(Error::invalid(format!("voxel size must be positive, got {voxel_um}")));
        }
        let mut dims = [0usize; 3];
        for k in 0..3 {
            if !(size_mm[k] > 0.0) || !size_mm[k].is_finite() {
                return Err(Error::invalid(format!("domain size must be positive, got {:?}", size_mm)));
            }
            dims[k] = voxels_for(size_mm[k], voxel_um);
            if dims[k] == 0 {
                return Err(Error::invalid(format!(
                    "axis {k} of {} mm is thinner than half a voxel ({voxel_um} um)",
                    size_mm[k]
                )));
            }
        }
        Ok(Self { size_mm, voxel_um, dims })
    }

    /// Builds a domain whose extent is exactly `dims * voxel_um`.
    pub fn from_dims(dims: [usize; 3], voxel_um: f64) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::invalid(format!("all dims must be >= 1, got {dims:?}")));
        }
        if !(voxel_um > 0.0) || !voxel_um.is_finite() {
            return Err(Error::invalid(format!("voxel size must be positive, got {voxel_um}")));
        }
        let size_mm = dims.map(|d| d as f64 * voxel_um / 1000.0);
        Ok(Self { size_mm, voxel_um, dims })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let x = index % self.dims[0];
        let rest = index / self.dims[0];
        [x, rest % self.dims[1], rest / self.dims[1]]
    }

    /// Voxel-center position in mm.
    #[inline]
    pub fn center_mm(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        let h = self.voxel_um / 1000.0;
        [(x as f64 + 0.5) * h, (y as f64 + 0.5) * h, (z as f64 + 0.5) * h]
    }

    /// Extent actually covered by the voxels (may differ from `size_mm` by
    /// less than one voxel per axis).
    pub fn voxel_extent_mm(&self) -> [f64; 3] {
        self.dims.map(|d| d as f64 * self.voxel_um / 1000.0)
    }

    pub fn voxel_volume_um3(&self) -> f64 {
        self.voxel_um.powi(3)
    }

    pub fn volume_um3(&self) -> f64 {
        self.len() as f64 * self.voxel_volume_um3()
    }

    pub fn contains_mm(&self, p: [f64; 3]) -> bool {
        let ext = self.voxel_extent_mm();
        (0..3).all(|k| p[k] >= 0.0 && p[k] <= ext[k])
    }
}

/// Rounded voxel count along one axis.
pub fn voxels_for(length_mm: f64, voxel_um: f64) -> usize {
    (length_mm * 1000.0 / voxel_um).round() as usize
}

/// Voxel grid of orientation labels plus optional order parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GrainField {
    spec: DomainSpec,
    n_ori: usize,
    labels: Vec<i32>,
    eta: Option<Vec<f64>>,
}

impl GrainField {
    /// Field filled with a single orientation class.
    pub fn uniform(spec: DomainSpec, n_ori: usize, label: i32) -> Result<Self> {
        if n_ori == 0 {
            return Err(Error::invalid("n_ori must be >= 1"));
        }
        if label != LIQUID && !(0..n_ori as i32).contains(&label) {
            return Err(Error::invalid(format!("label {label} outside [0, {n_ori})")));
        }
        Ok(Self {
            spec,
            n_ori,
            labels: vec![label; spec.len()],
            eta: None,
        })
    }

    pub fn from_labels(spec: DomainSpec, n_ori: usize, labels: Vec<i32>) -> Result<Self> {
        if n_ori == 0 {
            return Err(Error::invalid("n_ori must be >= 1"));
        }
        if labels.len() != spec.len() {
            return Err(Error::invalid(format!(
                "label array has {} entries, domain has {}",
                labels.len(),
                spec.len()
            )));
        }
        if let Some((i, &l)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l != LIQUID && !(0..n_ori as i32).contains(&l))
        {
            return Err(Error::invalid(format!("voxel {i} has label {l} outside [0, {n_ori})")));
        }
        Ok(Self { spec, n_ori, labels, eta: None })
    }

    /// Field built from order parameters; labels are derived from them.
    pub fn from_eta(spec: DomainSpec, n_ori: usize, eta: Vec<f64>) -> Result<Self> {
        if n_ori == 0 {
            return Err(Error::invalid("n_ori must be >= 1"));
        }
        if eta.len() != spec.len() * n_ori {
            return Err(Error::invalid(format!(
                "order-parameter array has {} entries, expected {}",
                eta.len(),
                spec.len() * n_ori
            )));
        }
        let mut field = Self {
            spec,
            n_ori,
            labels: vec![LIQUID; spec.len()],
            eta: Some(eta),
        };
        field.relabel();
        Ok(field)
    }

    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    pub fn n_ori(&self) -> usize {
        self.n_ori
    }

    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    pub fn eta(&self) -> Option<&[f64]> {
        self.eta.as_deref()
    }

    pub(crate) fn eta_mut(&mut self) -> Option<&mut Vec<f64>> {
        self.eta.as_mut()
    }

    pub(crate) fn labels_mut(&mut self) -> &mut Vec<i32> {
        &mut self.labels
    }

    pub fn has_eta(&self) -> bool {
        self.eta.is_some()
    }

    /// Allocates order parameters as one-hot vectors of the current labels
    /// (liquid voxels get all zeros). No-op when already present.
    pub fn ensure_eta(&mut self) {
        if self.eta.is_some() {
            return;
        }
        let n = self.n_ori;
        let mut eta = vec![0.0; self.labels.len() * n];
        for (v, &l) in self.labels.iter().enumerate() {
            if l >= 0 {
                eta[v * n + l as usize] = 1.0;
            }
        }
        self.eta = Some(eta);
    }

    /// Drops the order parameters, keeping labels only.
    pub fn without_eta(&self) -> Self {
        Self {
            spec: self.spec,
            n_ori: self.n_ori,
            labels: self.labels.clone(),
            eta: None,
        }
    }

    /// Recomputes labels from order parameters: argmax with ties to the lowest
    /// class, liquid when the maximum is below one half.
    pub fn relabel(&mut self) {
        let n = self.n_ori;
        if let Some(eta) = &self.eta {
            for (label, block) in self.labels.iter_mut().zip(eta.chunks_exact(n)) {
                *label = label_of(block);
            }
        }
    }

    pub(crate) fn relabel_range(&mut self, voxels: impl Iterator<Item = usize>) {
        let n = self.n_ori;
        if let Some(eta) = &self.eta {
            for v in voxels {
                self.labels[v] = label_of(&eta[v * n..(v + 1) * n]);
            }
        }
    }

    pub fn label_at(&self, x: usize, y: usize, z: usize) -> i32 {
        self.labels[self.spec.index(x, y, z)]
    }

    pub fn set_label(&mut self, x: usize, y: usize, z: usize, label: i32) {
        let v = self.spec.index(x, y, z);
        self.labels[v] = label;
        if let Some(eta) = &mut self.eta {
            let block = &mut eta[v * self.n_ori..(v + 1) * self.n_ori];
            block.iter_mut().for_each(|e| *e = 0.0);
            if label >= 0 {
                block[label as usize] = 1.0;
            }
        }
    }

    /// Count of voxels per class (index `n_ori` counts liquid voxels).
    pub fn label_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0usize; self.n_ori + 1];
        for &l in &self.labels {
            if l < 0 {
                hist[self.n_ori] += 1;
            } else {
                hist[l as usize] += 1;
            }
        }
        hist
    }

    /// FNV-1a hash of the labels, used to tie reports to an initial field.
    pub fn content_hash(&self) -> String {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for d in self.spec.dims {
            feed(&(d as u64).to_le_bytes());
        }
        feed(&self.spec.voxel_um.to_le_bytes());
        for &l in &self.labels {
            feed(&l.to_le_bytes());
        }
        format!("{h:016x}")
    }
}

#[inline]
pub(crate) fn label_of(block: &[f64]) -> i32 {
    let mut best = 0usize;
    let mut best_val = block[0];
    for (i, &e) in block.iter().enumerate().skip(1) {
        if e > best_val {
            best = i;
            best_val = e;
        }
    }
    if best_val >= 0.5 {
        best as i32
    } else {
        LIQUID
    }
}

/// Half-open axis-aligned voxel box.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VoxelBox {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl VoxelBox {
    pub fn full(spec: &DomainSpec) -> Self {
        Self { lo: [0; 3], hi: spec.dims }
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|k| self.hi[k] <= self.lo[k])
    }

    pub fn dims(&self) -> [usize; 3] {
        [0, 1, 2].map(|k| self.hi[k].saturating_sub(self.lo[k]))
    }

    pub fn len(&self) -> usize {
        let d = self.dims();
        d[0] * d[1] * d[2]
    }

    /// Box covering all voxels whose centers lie within `radius_mm` of the
    /// segment `a` to `b` bounding box, plus `pad` voxels, clamped to `spec`.
    pub fn around_mm(spec: &DomainSpec, a: [f64; 3], b: [f64; 3], radius_mm: f64, pad: usize) -> Self {
        let h = spec.voxel_um / 1000.0;
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for k in 0..3 {
            let min = a[k].min(b[k]) - radius_mm;
            let max = a[k].max(b[k]) + radius_mm;
            // voxel x has center (x + 0.5) h
            let l = ((min / h) - 0.5).floor() as i64 - pad as i64;
            let u = ((max / h) - 0.5).ceil() as i64 + 1 + pad as i64;
            lo[k] = l.clamp(0, spec.dims[k] as i64) as usize;
            hi[k] = u.clamp(0, spec.dims[k] as i64) as usize;
        }
        Self { lo, hi }
    }

    pub fn union(&self, other: &Self) -> Self {
        if self.is_empty() {
            return *other;
        }
        if other.is_empty() {
            return *self;
        }
        Self {
            lo: [0, 1, 2].map(|k| self.lo[k].min(other.lo[k])),
            hi: [0, 1, 2].map(|k| self.hi[k].max(other.hi[k])),
        }
    }

    /// Iterates flat indices of `spec` inside the box, x fastest.
    pub fn indices<'a>(&'a self, spec: &'a DomainSpec) -> impl Iterator<Item = usize> + 'a {
        (self.lo[2]..self.hi[2]).flat_map(move |z| {
            (self.lo[1]..self.hi[1])
                .flat_map(move |y| (self.lo[0]..self.hi[0]).map(move |x| spec.index(x, y, z)))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_follow_rounding_rule() {
        let spec = DomainSpec::new([1.0, 0.3, 0.1], DEFAULT_VOXEL_UM).unwrap();
        assert_eq!(spec.dims, [464, 139, 46]);
    }

    #[test]
    fn dims_within_one_voxel_of_extent() {
        let spec = DomainSpec::new([0.77, 0.31, 0.05], 3.3).unwrap();
        let ext = spec.voxel_extent_mm();
        for k in 0..3 {
            assert!((ext[k] - spec.size_mm[k]).abs() <= spec.voxel_um / 1000.0);
        }
    }

    #[test]
    fn rejects_degenerate_domains() {
        assert!(DomainSpec::new([1.0, 1.0, 0.0001], 2.0).is_err());
        assert!(DomainSpec::new([1.0, 1.0, 1.0], 0.0).is_err());
        assert!(DomainSpec::from_dims([4, 0, 4], 1.0).is_err());
    }

    #[test]
    fn index_coords_roundtrip() {
        let spec = DomainSpec::from_dims([5, 3, 4], 1.0).unwrap();
        for i in 0..spec.len() {
            let [x, y, z] = spec.coords(i);
            assert_eq!(spec.index(x, y, z), i);
        }
    }

    #[test]
    fn relabel_uses_half_threshold_and_lowest_tie() {
        let spec = DomainSpec::from_dims([3, 1, 1], 1.0).unwrap();
        let eta = vec![0.7, 0.7, 0.0, 0.2, 0.4, 0.49, 0.0, 0.0, 0.9];
        let f = GrainField::from_eta(spec, 3, eta).unwrap();
        assert_eq!(f.labels(), &[0, LIQUID, 2]);
    }

    #[test]
    fn ensure_eta_is_one_hot() {
        let spec = DomainSpec::from_dims([2, 1, 1], 1.0).unwrap();
        let mut f = GrainField::from_labels(spec, 3, vec![2, LIQUID]).unwrap();
        f.ensure_eta();
        assert_eq!(f.eta().unwrap(), &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_out_of_range_labels() {
        let spec = DomainSpec::from_dims([2, 1, 1], 1.0).unwrap();
        assert!(GrainField::from_labels(spec, 3, vec![0, 3]).is_err());
        assert!(GrainField::uniform(spec, 3, 5).is_err());
    }
}
