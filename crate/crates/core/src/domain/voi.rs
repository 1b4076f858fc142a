use super::{voxels_for, DomainSpec, GrainField, VoxelBox};
use crate::error::{Error, Result};

/// Fixed-size window into a larger domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VoiWindow {
    pub origin_voxel: [usize; 3],
    pub dims: [usize; 3],
}

impl VoiWindow {
    pub fn as_box(&self) -> VoxelBox {
        VoxelBox {
            lo: self.origin_voxel,
            hi: [0, 1, 2].map(|k| self.origin_voxel[k] + self.dims[k]),
        }
    }

    /// Window of `dims` voxels centered on `center_mm`, shifted (never shrunk)
    /// so it lies inside `spec`.
    pub fn centered(spec: &DomainSpec, center_mm: [f64; 3], dims: [usize; 3]) -> Result<Self> {
        if !spec.contains_mm(center_mm) {
            return Err(Error::invalid(format!("VOI center {center_mm:?} mm lies outside the domain")));
        }
        for k in 0..3 {
            if dims[k] == 0 || dims[k] > spec.dims[k] {
                return Err(Error::invalid(format!(
                    "VOI dims {dims:?} do not fit in domain dims {:?}",
                    spec.dims
                )));
            }
        }
        let h = spec.voxel_um / 1000.0;
        let origin_voxel = [0, 1, 2].map(|k| {
            let c = ((center_mm[k] / h).floor() as i64).min(spec.dims[k] as i64 - 1);
            let o = c - (dims[k] / 2) as i64;
            o.clamp(0, (spec.dims[k] - dims[k]) as i64) as usize
        });
        Ok(Self { origin_voxel, dims })
    }

    pub(crate) fn copy_out<T: Copy>(&self, spec: &DomainSpec, src: &[T], channels: usize) -> Vec<T> {
        let [wx, wy, wz] = self.dims;
        let [ox, oy, oz] = self.origin_voxel;
        let mut out = Vec::with_capacity(wx * wy * wz * channels);
        for z in 0..wz {
            for y in 0..wy {
                let start = spec.index(ox, oy + y, oz + z) * channels;
                out.extend_from_slice(&src[start..start + wx * channels]);
            }
        }
        out
    }

    pub(crate) fn copy_in<T: Copy>(&self, spec: &DomainSpec, dst: &mut [T], patch: &[T], channels: usize) {
        let [wx, wy, wz] = self.dims;
        let [ox, oy, oz] = self.origin_voxel;
        let row = wx * channels;
        for z in 0..wz {
            for y in 0..wy {
                let start = spec.index(ox, oy + y, oz + z) * channels;
                let src = (y + wy * z) * row;
                dst[start..start + row].copy_from_slice(&patch[src..src + row]);
            }
        }
    }
}

/// Copies the voxels inside `window` into a standalone field.
pub fn extract_window(field: &GrainField, window: &VoiWindow) -> Result<GrainField> {
    let spec = field.spec();
    for k in 0..3 {
        if window.dims[k] == 0 || window.origin_voxel[k] + window.dims[k] > spec.dims[k] {
            return Err(Error::invalid(format!("window {window:?} exceeds domain dims {:?}", spec.dims)));
        }
    }
    let sub = DomainSpec::from_dims(window.dims, spec.voxel_um)?;
    let labels = window.copy_out(spec, field.labels(), 1);
    let mut out = GrainField::from_labels(sub, field.n_ori(), labels)?;
    if let Some(eta) = field.eta() {
        let sub_eta = window.copy_out(spec, eta, field.n_ori());
        *out.eta_slot() = Some(sub_eta);
    }
    Ok(out)
}

/// Extracts a VOI of physical size `voi_dims_mm` centered on `center_mm`.
pub fn extract_voi(
    field: &GrainField,
    center_mm: [f64; 3],
    voi_dims_mm: [f64; 3],
) -> Result<(GrainField, VoiWindow)> {
    let spec = field.spec();
    let dims = voi_dims_mm.map(|d| voxels_for(d, spec.voxel_um));
    let window = VoiWindow::centered(spec, center_mm, dims)?;
    Ok((extract_window(field, &window)?, window))
}

/// Returns `field` with the voxels inside `window` replaced by `patch`.
///
/// When `field` carries order parameters and `patch` does not, the patch
/// voxels get one-hot order parameters from their labels.
pub fn write_back_voi(field: &GrainField, window: &VoiWindow, patch: &GrainField) -> Result<GrainField> {
    let mut out = field.clone();
    write_back_in_place(&mut out, window, patch)?;
    Ok(out)
}

pub(crate) fn write_back_in_place(field: &mut GrainField, window: &VoiWindow, patch: &GrainField) -> Result<()> {
    if patch.spec().dims != window.dims {
        return Err(Error::invalid(format!(
            "patch dims {:?} differ from window dims {:?}",
            patch.spec().dims,
            window.dims
        )));
    }
    if patch.n_ori() != field.n_ori() {
        return Err(Error::invalid(format!(
            "patch has {} orientation classes, field has {}",
            patch.n_ori(),
            field.n_ori()
        )));
    }
    let spec = *field.spec();
    for k in 0..3 {
        if window.origin_voxel[k] + window.dims[k] > spec.dims[k] {
            return Err(Error::invalid(format!("window {window:?} exceeds domain dims {:?}", spec.dims)));
        }
    }
    window.copy_in(&spec, field.labels_mut(), patch.labels(), 1);
    let n = field.n_ori();
    if let Some(eta) = field.eta_mut() {
        match patch.eta() {
            Some(p) => window.copy_in(&spec, eta, p, n),
            None => {
                let mut p = patch.clone();
                p.ensure_eta();
                window.copy_in(&spec, eta, p.eta().unwrap(), n);
            }
        }
    }
    Ok(())
}

impl GrainField {
    pub(crate) fn eta_slot(&mut self) -> &mut Option<Vec<f64>> {
        &mut self.eta
    }
}
