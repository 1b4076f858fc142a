//! Steady-state moving point-source (Rosenthal) temperature field and the
//! ever-melted mask.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{DomainSpec, VoxelBox};
use crate::error::{Error, Result};
use crate::scanpath::ScanPath;

/// Absorbed laser power and travel speed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LaserParams {
    pub power_w: f64,
    pub speed_m_s: f64,
}

impl LaserParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.power_w > 0.0 && self.speed_m_s > 0.0) {
            return Err(Error::invalid(format!(
                "laser power and speed must be positive, got {} W at {} m/s",
                self.power_w, self.speed_m_s
            )));
        }
        Ok(())
    }
}

impl Default for LaserParams {
    fn default() -> Self {
        Self {
            power_w: 25.0,
            speed_m_s: 0.5,
        }
    }
}

/// Thermal constants. The defaults are generic steel-like placeholders.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialThermal {
    pub conductivity_w_mk: f64,
    pub diffusivity_m2_s: f64,
    pub ambient_k: f64,
    pub melt_k: f64,
    /// Radius below which the point-source singularity is cut off.
    pub clamp_radius_um: f64,
}

impl Default for MaterialThermal {
    fn default() -> Self {
        Self {
            conductivity_w_mk: 30.0,
            diffusivity_m2_s: 1e-5,
            ambient_k: 293.0,
            melt_k: 1700.0,
            clamp_radius_um: crate::domain::DEFAULT_VOXEL_UM / 2.0,
        }
    }
}

impl MaterialThermal {
    pub fn validate(&self) -> Result<()> {
        let all_positive = [
            self.conductivity_w_mk,
            self.diffusivity_m2_s,
            self.ambient_k,
            self.melt_k,
            self.clamp_radius_um,
        ]
        .iter()
        .all(|&v| v > 0.0 && v.is_finite());
        if !all_positive {
            return Err(Error::invalid("material constants must be positive and finite"));
        }
        if self.melt_k <= self.ambient_k {
            return Err(Error::invalid("melting point must exceed ambient temperature"));
        }
        Ok(())
    }

    /// Distance (mm) beyond which the field of `power_w` stays below
    /// `threshold_k`; the exponential factor never exceeds one.
    pub fn influence_radius_mm(&self, power_w: f64, threshold_k: f64) -> f64 {
        let excess = threshold_k - self.ambient_k;
        if excess <= 0.0 {
            return f64::INFINITY;
        }
        power_w / (2.0 * std::f64::consts::PI * self.conductivity_w_mk * excess) * 1000.0
    }
}

/// Per-voxel temperature in K.
#[derive(Clone, Debug, PartialEq)]
pub struct TemperatureField {
    spec: DomainSpec,
    values: Vec<f32>,
}

impl TemperatureField {
    pub fn new(spec: DomainSpec, values: Vec<f32>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::invalid(format!(
                "temperature array has {} entries, domain has {}",
                values.len(),
                spec.len()
            )));
        }
        Ok(Self { spec, values })
    }

    pub fn ambient(spec: DomainSpec, mat: &MaterialThermal) -> Self {
        Self {
            spec,
            values: vec![mat.ambient_k as f32; spec.len()],
        }
    }

    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn max(&self) -> f32 {
        self.values.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }
}

/// Voxels that have reached the melting point at least once.
#[derive(Clone, Debug, PartialEq)]
pub struct MeltMask {
    spec: DomainSpec,
    melted: Vec<bool>,
}

impl MeltMask {
    pub fn empty(spec: DomainSpec) -> Self {
        Self {
            spec,
            melted: vec![false; spec.len()],
        }
    }

    pub fn from_flags(spec: DomainSpec, melted: Vec<bool>) -> Self {
        assert_eq!(melted.len(), spec.len(), "mask length must match domain");
        Self { spec, melted }
    }

    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    pub fn melted(&self) -> &[bool] {
        &self.melted
    }

    pub(crate) fn melted_mut(&mut self) -> &mut [bool] {
        &mut self.melted
    }

    pub fn count(&self) -> usize {
        self.melted.iter().filter(|&&m| m).count()
    }

    pub fn is_subset_of(&self, other: &MeltMask) -> bool {
        self.melted.iter().zip(&other.melted).all(|(&a, &b)| !a || b)
    }

    pub fn union(&self, other: &MeltMask) -> Result<MeltMask> {
        if self.spec.dims != other.spec.dims {
            return Err(Error::invalid("mask dims differ"));
        }
        Ok(Self {
            spec: self.spec,
            melted: self.melted.iter().zip(&other.melted).map(|(&a, &b)| a || b).collect(),
        })
    }
}

/// Rosenthal temperature at `point_mm` for a source at `laser_pos_mm`
/// travelling along the unit vector `travel_dir`.
#[inline]
pub fn rosenthal_point(
    point_mm: [f64; 3],
    laser_pos_mm: [f64; 3],
    travel_dir: [f64; 3],
    laser: &LaserParams,
    mat: &MaterialThermal,
) -> f64 {
    let d = [0, 1, 2].map(|k| (point_mm[k] - laser_pos_mm[k]) * 1e-3);
    let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let xi = d[0] * travel_dir[0] + d[1] * travel_dir[1] + d[2] * travel_dir[2];
    let r_eff = r.max(mat.clamp_radius_um * 1e-6);
    let scale = laser.power_w / (2.0 * std::f64::consts::PI * mat.conductivity_w_mk * r_eff);
    mat.ambient_k + scale * (-laser.speed_m_s * (xi + r_eff) / (2.0 * mat.diffusivity_m2_s)).exp()
}

/// Evaluates the source at every voxel center inside `region`, writing into
/// the flat array `out` laid out over `spec`.
pub fn evaluate_in_box(
    spec: &DomainSpec,
    region: &VoxelBox,
    laser_pos_mm: [f64; 3],
    travel_dir: [f64; 3],
    laser: &LaserParams,
    mat: &MaterialThermal,
    out: &mut [f32],
) {
    let [nx, ny, _] = spec.dims;
    let slab = nx * ny;
    out.par_chunks_mut(slab)
        .enumerate()
        .filter(|(z, _)| *z >= region.lo[2] && *z < region.hi[2])
        .for_each(|(z, plane)| {
            for y in region.lo[1]..region.hi[1] {
                for x in region.lo[0]..region.hi[0] {
                    let p = spec.center_mm(x, y, z);
                    plane[x + nx * y] = rosenthal_point(p, laser_pos_mm, travel_dir, laser, mat) as f32;
                }
            }
        });
}

/// Full-domain field for a source at a given position and heading.
pub fn field_for_source(
    spec: &DomainSpec,
    laser_pos_mm: [f64; 3],
    travel_dir: [f64; 3],
    laser: &LaserParams,
    mat: &MaterialThermal,
) -> TemperatureField {
    let mut values = vec![0.0f32; spec.len()];
    evaluate_in_box(spec, &VoxelBox::full(spec), laser_pos_mm, travel_dir, laser, mat, &mut values);
    TemperatureField { spec: *spec, values }
}

/// Temperature field with the source where `path` puts it at time `t_s`.
pub fn field_at_time(
    path: &ScanPath,
    t_s: f64,
    spec: &DomainSpec,
    laser: &LaserParams,
    mat: &MaterialThermal,
) -> Result<TemperatureField> {
    let duration = path.duration_s();
    if !(t_s >= 0.0 && t_s <= duration * (1.0 + 1e-12)) {
        return Err(Error::invalid(format!("time {t_s} s outside path duration [0, {duration}] s")));
    }
    let (pos, dir) = path.state_at(t_s);
    Ok(field_for_source(spec, pos, dir, laser, mat))
}

/// `melted[v] |= T[v] >= T_m`.
pub fn accumulate_melt(mask: &MeltMask, field: &TemperatureField, mat: &MaterialThermal) -> Result<MeltMask> {
    let mut out = mask.clone();
    accumulate_melt_in_place(&mut out, field, mat)?;
    Ok(out)
}

pub fn accumulate_melt_in_place(mask: &mut MeltMask, field: &TemperatureField, mat: &MaterialThermal) -> Result<()> {
    if mask.spec.dims != field.spec.dims {
        return Err(Error::invalid(format!(
            "mask dims {:?} differ from field dims {:?}",
            mask.spec.dims, field.spec.dims
        )));
    }
    let melt = mat.melt_k as f32;
    for (m, &t) in mask.melted.iter_mut().zip(&field.values) {
        *m |= t >= melt;
    }
    Ok(())
}
