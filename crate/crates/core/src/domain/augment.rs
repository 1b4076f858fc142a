//! Symmetry augmentation of VOI samples.
//!
//! The pinned list holds 19 signed axis permutations:
//!
//! * the 7 non-identity symmetries of the square x-y section
//!   (quarter turns, x/y reflections, both diagonal reflections),
//! * the same 8 x-y symmetries composed with a z flip (including the bare
//!   z flip),
//! * the 4 axis permutations that move z (`xz`, `yz` swaps and both 3-cycles).
//!
//! The last group transposes the patch shape, so e.g. a 79x79x32 sample
//! yields 32x79x79 and 79x32x79 variants.

use super::{DomainSpec, GrainField};
use crate::error::{Error, Result};
use crate::thermal::TemperatureField;

/// Signed axis permutation: output axis `k` reads input axis `perm[k]`,
/// mirrored when `flip[k]` is set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AxisTransform {
    pub name: &'static str,
    pub perm: [usize; 3],
    pub flip: [bool; 3],
}

const fn t(name: &'static str, perm: [usize; 3], flip: [bool; 3]) -> AxisTransform {
    AxisTransform { name, perm, flip }
}

const XY: [usize; 3] = [0, 1, 2];
const YX: [usize; 3] = [1, 0, 2];

pub const AUGMENTATIONS: [AxisTransform; 19] = [
    t("rot90_ccw", YX, [true, false, false]),
    t("rot180", XY, [true, true, false]),
    t("rot90_cw", YX, [false, true, false]),
    t("mirror_x", XY, [true, false, false]),
    t("mirror_y", XY, [false, true, false]),
    t("mirror_diag", YX, [false, false, false]),
    t("mirror_antidiag", YX, [true, true, false]),
    t("flip_z", XY, [false, false, true]),
    t("rot90_ccw_flip_z", YX, [true, false, true]),
    t("rot180_flip_z", XY, [true, true, true]),
    t("rot90_cw_flip_z", YX, [false, true, true]),
    t("mirror_x_flip_z", XY, [true, false, true]),
    t("mirror_y_flip_z", XY, [false, true, true]),
    t("mirror_diag_flip_z", YX, [false, false, true]),
    t("mirror_antidiag_flip_z", YX, [true, true, true]),
    t("swap_xz", [2, 1, 0], [false; 3]),
    t("swap_yz", [0, 2, 1], [false; 3]),
    t("cycle_zxy", [2, 0, 1], [false; 3]),
    t("cycle_yzx", [1, 2, 0], [false; 3]),
];

impl AxisTransform {
    pub fn output_dims(&self, dims: [usize; 3]) -> [usize; 3] {
        self.perm.map(|p| dims[p])
    }

    pub fn inverse(&self) -> AxisTransform {
        let mut perm = [0; 3];
        let mut flip = [false; 3];
        for k in 0..3 {
            perm[self.perm[k]] = k;
            flip[self.perm[k]] = self.flip[k];
        }
        AxisTransform { name: "inverse", perm, flip }
    }

    /// Applies the transform to a flat x-fastest array with `channels`
    /// innermost values per voxel.
    pub fn apply<T: Copy>(&self, dims: [usize; 3], data: &[T], channels: usize) -> ([usize; 3], Vec<T>) {
        let out_dims = self.output_dims(dims);
        let mut out = Vec::with_capacity(data.len());
        let mut src = [0usize; 3];
        for o2 in 0..out_dims[2] {
            for o1 in 0..out_dims[1] {
                for o0 in 0..out_dims[0] {
                    let o = [o0, o1, o2];
                    for k in 0..3 {
                        let a = self.perm[k];
                        src[a] = if self.flip[k] { dims[a] - 1 - o[k] } else { o[k] };
                    }
                    let v = (src[0] + dims[0] * (src[1] + dims[1] * src[2])) * channels;
                    out.extend_from_slice(&data[v..v + channels]);
                }
            }
        }
        (out_dims, out)
    }

    pub fn apply_field(&self, field: &GrainField) -> Result<GrainField> {
        let spec = field.spec();
        let (dims, labels) = self.apply(spec.dims, field.labels(), 1);
        let out_spec = DomainSpec::from_dims(dims, spec.voxel_um)?;
        let mut out = GrainField::from_labels(out_spec, field.n_ori(), labels)?;
        if let Some(eta) = field.eta() {
            let (_, e) = self.apply(spec.dims, eta, field.n_ori());
            *out.eta_slot() = Some(e);
        }
        Ok(out)
    }

    pub fn apply_temperature(&self, temp: &TemperatureField) -> Result<TemperatureField> {
        let spec = temp.spec();
        let (dims, values) = self.apply(spec.dims, temp.values(), 1);
        TemperatureField::new(DomainSpec::from_dims(dims, spec.voxel_um)?, values)
    }
}

/// Emits the 19 pinned symmetry variants of a (grain, temperature) pair.
pub fn augment_voi(patch: &GrainField, temperature: &TemperatureField) -> Result<Vec<(GrainField, TemperatureField)>> {
    let dims = patch.spec().dims;
    if dims[0] != dims[1] {
        return Err(Error::invalid(format!(
            "augmentation needs a square x-y section, got {}x{}",
            dims[0], dims[1]
        )));
    }
    if temperature.spec().dims != dims {
        return Err(Error::invalid(format!(
            "temperature dims {:?} differ from patch dims {dims:?}",
            temperature.spec().dims
        )));
    }
    AUGMENTATIONS
        .iter()
        .map(|t| Ok((t.apply_field(patch)?, t.apply_temperature(temperature)?)))
        .collect()
}
