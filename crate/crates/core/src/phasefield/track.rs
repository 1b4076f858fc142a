//! Phase-field evolution under a laser moving along a scan path.
//!
//! Each step evaluates the Rosenthal field around the laser, accumulates the
//! melt mask, erases order where the metal is molten and advances the order
//! parameters. Boundary mobility is thermally activated: it scales linearly
//! from zero at `mobility_onset_k` to full at the melting point, so cold
//! metal is frozen and only the hot region around the laser is integrated.
//! After the path ends the laser parks at the last waypoint while its power
//! ramps to zero (`cooldown_s`), then the remaining liquid is allowed to
//! resolidify with the mobility of the parked full-power field.

use serde::{Deserialize, Serialize};

use super::{step_region, zeta_of, PFParams};
use crate::domain::{DomainSpec, GrainField, VoiWindow, VoxelBox};
use crate::error::{Error, Result};
use crate::scanpath::ScanPath;
use crate::thermal::{field_for_source, rosenthal_point, LaserParams, MaterialThermal, MeltMask, TemperatureField};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackSettings {
    /// Width of the mushy band over which zeta goes from 0 to 1.
    pub zeta_band_k: f64,
    /// Temperature below which boundaries do not move.
    pub mobility_onset_k: f64,
    /// Power ramp-down time at the end of the path.
    pub cooldown_s: f64,
    /// Cap on resolidification steps after the ramp.
    pub settle_max_steps: usize,
    /// Sample interval in steps; 0 disables sampling.
    pub sample_every: usize,
    /// Simulate only the box the laser can heat (exact; off for debugging).
    pub crop: bool,
}

impl Default for TrackSettings {
    fn default() -> Self {
        Self {
            zeta_band_k: super::DEFAULT_ZETA_BAND_K,
            mobility_onset_k: 700.0,
            cooldown_s: 2e-4,
            settle_max_steps: 2000,
            sample_every: 100,
            crop: true,
        }
    }
}

impl TrackSettings {
    pub fn validate(&self, mat: &MaterialThermal) -> Result<()> {
        if !(self.zeta_band_k >= 0.0) || !(self.cooldown_s >= 0.0) {
            return Err(Error::invalid("zeta band and cooldown must be non-negative"));
        }
        if !(self.mobility_onset_k < mat.melt_k) {
            return Err(Error::invalid(format!(
                "mobility onset {} K must lie below the melting point {} K",
                self.mobility_onset_k, mat.melt_k
            )));
        }
        Ok(())
    }
}

/// Snapshot of the whole domain at a sampled step.
#[derive(Clone, Debug)]
pub struct TrackSample {
    pub step: usize,
    pub time_s: f64,
    pub laser_mm: [f64; 3],
    pub power_w: f64,
    pub field: GrainField,
    pub temperature: TemperatureField,
}

/// Outcome of a track simulation, held on the cropped sub-domain.
#[derive(Clone, Debug)]
pub struct TrackResult {
    pub crop: VoiWindow,
    /// Final state of the cropped sub-domain, order parameters included.
    pub field: GrainField,
    /// Ever-melted voxels of the cropped sub-domain.
    pub melt: MeltMask,
    pub travel_steps: usize,
    pub cooldown_steps: usize,
    pub settle_steps: usize,
    pub sim_time_s: f64,
    /// Voxels still molten (order parameters summing below one half) at the end.
    pub unsolidified: usize,
    pub samples: Vec<TrackSample>,
}

impl TrackResult {
    pub fn steps(&self) -> usize {
        self.travel_steps + self.cooldown_steps + self.settle_steps
    }

    /// Final full-domain field.
    pub fn final_field(&self, initial: &GrainField) -> Result<GrainField> {
        let mut out = initial.clone();
        out.ensure_eta();
        crate::domain::write_back_in_place(&mut out, &self.crop, &self.field)?;
        Ok(out)
    }

    /// Melt mask over the full domain.
    pub fn melt_mask(&self, spec: &DomainSpec) -> MeltMask {
        let mut flags = vec![false; spec.len()];
        self.crop.copy_in(spec, &mut flags, self.melt.melted(), 1);
        MeltMask::from_flags(*spec, flags)
    }
}

/// Runs a track and collects samples every `settings.sample_every` steps.
pub fn run_track(
    initial: &GrainField,
    path: &ScanPath,
    laser: &LaserParams,
    mat: &MaterialThermal,
    p: &PFParams,
    settings: &TrackSettings,
) -> Result<TrackResult> {
    let mut samples = Vec::new();
    let mut res = run_track_with(initial, path, laser, mat, p, settings, |s| {
        samples.push(s);
        Ok(())
    })?;
    res.samples = samples;
    Ok(res)
}

#[derive(Clone, Copy)]
struct Drive {
    pos: [f64; 3],
    dir: [f64; 3],
    /// Power multiplier for melting and zeta.
    factor: f64,
    dt_s: f64,
    time_s: f64,
}

/// Runs a track, handing each sample to `on_sample` instead of storing it.
pub fn run_track_with(
    initial: &GrainField,
    path: &ScanPath,
    laser: &LaserParams,
    mat: &MaterialThermal,
    p: &PFParams,
    settings: &TrackSettings,
    mut on_sample: impl FnMut(TrackSample) -> Result<()>,
) -> Result<TrackResult> {
    laser.validate()?;
    mat.validate()?;
    p.validate()?;
    settings.validate(mat)?;
    let gs = *initial.spec();
    if initial.n_ori() != p.n_ori {
        return Err(Error::invalid(format!(
            "field has {} classes, parameters expect {}",
            initial.n_ori(),
            p.n_ori
        )));
    }
    if (gs.voxel_um - p.dx_um).abs() > 1e-9 * p.dx_um {
        return Err(Error::invalid(format!(
            "field voxel {} um differs from solver voxel {} um",
            gs.voxel_um, p.dx_um
        )));
    }
    let ext = gs.voxel_extent_mm();
    for (k, w) in path.waypoints().iter().enumerate() {
        if (0..3).any(|a| w[a] < -1e-9 || w[a] > ext[a] + 1e-9) {
            return Err(Error::InvalidPath {
                step: k,
                message: format!("waypoint {w:?} mm lies outside the domain {ext:?} mm"),
            });
        }
    }
    let path = path.clone().with_laser(laser);

    let radius = mat.influence_radius_mm(laser.power_w, settings.mobility_onset_k);
    let crop_box = if settings.crop {
        let w = path.waypoints();
        let mut b = VoxelBox::around_mm(&gs, w[0], w[0], radius, 2);
        for s in w.windows(2) {
            b = b.union(&VoxelBox::around_mm(&gs, s[0], s[1], radius, 2));
        }
        b
    } else {
        VoxelBox::full(&gs)
    };
    let crop = VoiWindow {
        origin_voxel: crop_box.lo,
        dims: crop_box.dims(),
    };
    let mut sub = crate::domain::extract_window(initial, &crop)?;
    sub.ensure_eta();
    let ls = *sub.spec();
    let mut melt = MeltMask::empty(ls);

    // schedule: travel steps evenly divide the path so reversed paths visit
    // mirrored positions; then the ramp; then settling
    let duration = path.duration_s();
    let travel_steps = if duration > 0.0 { (duration / p.dt_s).ceil() as usize } else { 0 };
    let travel_dt = if travel_steps > 0 { duration / travel_steps as f64 } else { p.dt_s };
    let cooldown_steps = ((settings.cooldown_s / p.dt_s).ceil() as usize).max(1);
    let end = path.state_at(duration);

    let mut scratch = Vec::new();
    let mut buffers = DriveBuffers::default();
    let mut time = 0.0;
    let mut step = 0usize;
    let mut settle_steps = 0usize;
    let travel_p = p.with_dt(travel_dt)?;

    let sample = |step: usize, d: &Drive, sub: &GrainField, on_sample: &mut dyn FnMut(TrackSample) -> Result<()>| -> Result<()> {
        if settings.sample_every == 0 || !step.is_multiple_of(settings.sample_every) {
            return Ok(());
        }
        let mut labels = initial.labels().to_vec();
        crop.copy_in(&gs, &mut labels, sub.labels(), 1);
        let scaled = LaserParams {
            power_w: laser.power_w * d.factor,
            speed_m_s: laser.speed_m_s,
        };
        let temperature = if d.factor > 0.0 {
            field_for_source(&gs, d.pos, d.dir, &scaled, mat)
        } else {
            TemperatureField::ambient(gs, mat)
        };
        on_sample(TrackSample {
            step,
            time_s: d.time_s,
            laser_mm: d.pos,
            power_w: scaled.power_w,
            field: GrainField::from_labels(gs, initial.n_ori(), labels)?,
            temperature,
        })
    };

    let total_drive = travel_steps + cooldown_steps;
    for k in 0..total_drive {
        let d = if k < travel_steps {
            let t = k as f64 * duration / travel_steps as f64;
            let (pos, dir) = path.state_at(t);
            Drive { pos, dir, factor: 1.0, dt_s: travel_dt, time_s: time }
        } else {
            let j = k - travel_steps;
            Drive {
                pos: end.0,
                dir: end.1,
                factor: (cooldown_steps - j) as f64 / cooldown_steps as f64,
                dt_s: p.dt_s,
                time_s: time,
            }
        };
        sample(step, &d, &sub, &mut on_sample)?;
        let pk = if k < travel_steps { &travel_p } else { p };
        advance(&mut sub, &mut melt, &gs, &crop, &d, laser, mat, pk, settings, radius, &mut buffers, &mut scratch)?;
        time += d.dt_s;
        step += 1;
    }

    // resolidify what is still liquid near the parked laser
    let park = Drive {
        pos: end.0,
        dir: end.1,
        factor: 0.0,
        dt_s: p.dt_s,
        time_s: 0.0,
    };
    while settle_steps < settings.settle_max_steps {
        let d = Drive { time_s: time, ..park };
        let active = advance(&mut sub, &mut melt, &gs, &crop, &d, laser, mat, p, settings, radius, &mut buffers, &mut scratch)?;
        let liquid_left = active.indices(&ls).any(|v| is_molten(&sub, v));
        sample(step, &d, &sub, &mut on_sample)?;
        time += d.dt_s;
        step += 1;
        settle_steps += 1;
        if !liquid_left {
            break;
        }
    }
    let last = Drive { time_s: time, ..park };
    if settle_steps == 0 {
        sample(step, &last, &sub, &mut on_sample)?;
    }

    let unsolidified = (0..ls.len()).filter(|&v| is_molten(&sub, v)).count();
    Ok(TrackResult {
        crop,
        field: sub,
        melt,
        travel_steps,
        cooldown_steps,
        settle_steps,
        sim_time_s: time,
        unsolidified,
        samples: Vec::new(),
    })
}

/// Molten means the order parameters sum to less than one half; diffuse
/// junction voxels can be labelled liquid while still being solid.
fn is_molten(field: &GrainField, v: usize) -> bool {
    let n = field.n_ori();
    field.eta().is_some_and(|e| e[v * n..(v + 1) * n].iter().sum::<f64>() < 0.5)
}

#[derive(Default)]
struct DriveBuffers {
    zeta: Vec<f64>,
    mobility: Vec<f64>,
    erase: Vec<usize>,
}

/// One coupled step; returns the box (local coordinates) that was integrated.
#[allow(clippy::too_many_arguments)]
fn advance(
    sub: &mut GrainField,
    melt: &mut MeltMask,
    gs: &DomainSpec,
    crop: &VoiWindow,
    d: &Drive,
    laser: &LaserParams,
    mat: &MaterialThermal,
    p: &PFParams,
    settings: &TrackSettings,
    radius_mm: f64,
    buf: &mut DriveBuffers,
    scratch: &mut Vec<f64>,
) -> Result<VoxelBox> {
    let ls = *sub.spec();
    let o = crop.origin_voxel;
    let g = VoxelBox::around_mm(gs, d.pos, d.pos, radius_mm, 1);
    // clamp into the crop and shift to local coordinates
    let lo = [0, 1, 2].map(|k| g.lo[k].max(o[k]) - o[k]);
    let hi = [0, 1, 2].map(|k| g.hi[k].min(o[k] + crop.dims[k]).max(g.lo[k].max(o[k])) - o[k]);
    let broad = VoxelBox { lo, hi };
    if broad.is_empty() {
        return Ok(broad);
    }
    let n_box = broad.len();
    buf.zeta.clear();
    buf.zeta.resize(n_box, 1.0);
    buf.mobility.clear();
    buf.mobility.resize(n_box, 0.0);
    buf.erase.clear();
    let span = mat.melt_k - settings.mobility_onset_k;
    let [bx, by, _] = broad.dims();
    let mut tight_lo = [usize::MAX; 3];
    let mut tight_hi = [0usize; 3];
    let melted = melt.melted_mut();
    for z in broad.lo[2]..broad.hi[2] {
        for y in broad.lo[1]..broad.hi[1] {
            for x in broad.lo[0]..broad.hi[0] {
                let i = (x - lo[0]) + bx * ((y - lo[1]) + by * (z - lo[2]));
                let center = gs.center_mm(x + o[0], y + o[1], z + o[2]);
                let t_full = rosenthal_point(center, d.pos, d.dir, laser, mat);
                let s = ((t_full - settings.mobility_onset_k) / span).clamp(0.0, 1.0);
                buf.mobility[i] = s;
                if s > 0.0 {
                    for (k, c) in [x, y, z].into_iter().enumerate() {
                        tight_lo[k] = tight_lo[k].min(c);
                        tight_hi[k] = tight_hi[k].max(c + 1);
                    }
                }
                let t = if d.factor == 1.0 {
                    t_full
                } else {
                    mat.ambient_k + d.factor * (t_full - mat.ambient_k)
                };
                let zeta = zeta_of(t, mat.melt_k, settings.zeta_band_k);
                buf.zeta[i] = zeta;
                if t >= mat.melt_k {
                    let v = ls.index(x, y, z);
                    melted[v] = true;
                }
                if zeta == 0.0 {
                    buf.erase.push(ls.index(x, y, z));
                }
            }
        }
    }
    if !buf.erase.is_empty() {
        let n = sub.n_ori();
        let eta = sub.eta_mut().expect("track fields carry order parameters");
        for &v in &buf.erase {
            eta[v * n..(v + 1) * n].iter_mut().for_each(|e| *e = 0.0);
        }
        sub.relabel_range(buf.erase.iter().copied());
    }
    if tight_lo[0] == usize::MAX {
        return Ok(VoxelBox { lo: broad.lo, hi: broad.lo });
    }
    let tight = VoxelBox { lo: tight_lo, hi: tight_hi };
    step_region(sub, p, &tight, &broad, &buf.zeta, Some(&buf.mobility), scratch)?;
    Ok(tight)
}
