//! Multi-order-parameter Allen-Cahn grain growth coupled to a temperature
//! field through the solid indicator `zeta`.
//!
//! Free-energy density (per unit volume):
//!
//! ```text
//! f = m [ sum_i (eta_i^4/4 - eta_i^2/2) + gamma sum_{i<j} eta_i^2 eta_j^2
//!         + (1 - zeta)^2 sum_i eta_i^2 + 1/4 ] + kappa/2 sum_i |grad eta_i|^2
//! ```
//!
//! evolved by `d eta_i/dt = -L (df/deta_i - kappa lap eta_i)` with explicit
//! Euler, a 7-point Laplacian and zero-flux (mirror) boundaries. The constant
//! `1/4` only shifts the energy so that a bulk grain has zero density.

mod track;

pub use track::{run_track, run_track_with, TrackResult, TrackSample, TrackSettings};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{DomainSpec, GrainField, VoxelBox};
use crate::error::{Error, Result};
use crate::thermal::{MaterialThermal, TemperatureField};

/// Default grain-boundary width in micrometres.
pub const DEFAULT_WIDTH_UM: f64 = 9.6;
pub const DEFAULT_GAMMA: f64 = 1.5;
pub const DEFAULT_SIGMA_J_M2: f64 = 0.5;
pub const DEFAULT_MOBILITY: f64 = 1e-12;
pub const DEFAULT_STABILITY_FACTOR: f64 = 0.125;
/// Upper bound on `dt L kappa / dx^2` accepted by [`PFParams::with_dt`].
pub const MAX_STABILITY_FACTOR: f64 = 0.25;
pub const DEFAULT_ZETA_BAND_K: f64 = 50.0;

/// Model coefficients in SI units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PFParams {
    pub m_g: f64,
    pub gamma: f64,
    pub kappa_g: f64,
    pub l_g: f64,
    pub boundary_width_um: f64,
    pub n_ori: usize,
    pub dt_s: f64,
    pub dx_um: f64,
}

impl PFParams {
    /// Coefficients from interface energy `sigma` (J/m^2), boundary mobility
    /// (m^4/(J s)) and width `l`, with gamma = 1.5:
    /// `kappa = 3/4 sigma l`, `m = 6 sigma / l`, `L = 4/3 M / l`.
    /// The time step is `stability_factor * dx^2 / (L kappa)`.
    pub fn from_physical(
        sigma_j_m2: f64,
        mobility: f64,
        width_um: f64,
        dx_um: f64,
        n_ori: usize,
        stability_factor: f64,
    ) -> Result<Self> {
        for (name, v) in [
            ("sigma", sigma_j_m2),
            ("mobility", mobility),
            ("boundary width", width_um),
            ("voxel size", dx_um),
            ("stability factor", stability_factor),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if n_ori == 0 {
            return Err(Error::invalid("n_ori must be >= 1"));
        }
        if stability_factor > MAX_STABILITY_FACTOR {
            return Err(Error::invalid(format!(
                "stability factor {stability_factor} exceeds {MAX_STABILITY_FACTOR}"
            )));
        }
        let l = width_um * 1e-6;
        let mut p = Self {
            m_g: 6.0 * sigma_j_m2 / l,
            gamma: DEFAULT_GAMMA,
            kappa_g: 0.75 * sigma_j_m2 * l,
            l_g: 4.0 * mobility / (3.0 * l),
            boundary_width_um: width_um,
            n_ori,
            dt_s: 0.0,
            dx_um,
        };
        p.dt_s = p.stable_dt(stability_factor);
        Ok(p)
    }

    /// Default coefficients at the given voxel size.
    pub fn defaults(dx_um: f64, n_ori: usize) -> Result<Self> {
        Self::from_physical(
            DEFAULT_SIGMA_J_M2,
            DEFAULT_MOBILITY,
            DEFAULT_WIDTH_UM,
            dx_um,
            n_ori,
            DEFAULT_STABILITY_FACTOR,
        )
    }

    pub fn dx_m(&self) -> f64 {
        self.dx_um * 1e-6
    }

    pub fn stable_dt(&self, factor: f64) -> f64 {
        factor * self.dx_m().powi(2) / (self.l_g * self.kappa_g)
    }

    /// `dt L kappa / dx^2` for the current step.
    pub fn stability_number(&self) -> f64 {
        self.dt_s * self.l_g * self.kappa_g / self.dx_m().powi(2)
    }

    pub fn with_dt(mut self, dt_s: f64) -> Result<Self> {
        self.dt_s = dt_s;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.m_g, self.gamma, self.kappa_g, self.l_g, self.boundary_width_um, self.dt_s, self.dx_um]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite());
        if !ok || self.n_ori == 0 {
            return Err(Error::invalid(format!("phase-field parameters must be positive: {self:?}")));
        }
        if self.stability_number() > MAX_STABILITY_FACTOR * (1.0 + 1e-12) {
            return Err(Error::invalid(format!(
                "dt {} s exceeds the explicit stability bound ({} > {MAX_STABILITY_FACTOR})",
                self.dt_s,
                self.stability_number()
            )));
        }
        Ok(())
    }
}

/// Per-voxel solid indicator in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct SolidIndicator {
    spec: DomainSpec,
    zeta: Vec<f64>,
}

impl SolidIndicator {
    pub fn solid(spec: DomainSpec) -> Self {
        Self {
            spec,
            zeta: vec![1.0; spec.len()],
        }
    }

    pub fn new(spec: DomainSpec, zeta: Vec<f64>) -> Result<Self> {
        if zeta.len() != spec.len() {
            return Err(Error::invalid(format!("zeta has {} entries, domain has {}", zeta.len(), spec.len())));
        }
        if let Some(i) = zeta.iter().position(|z| !(0.0..=1.0).contains(z)) {
            return Err(Error::invalid(format!("zeta[{i}] = {} outside [0, 1]", zeta[i])));
        }
        Ok(Self { spec, zeta })
    }

    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.zeta
    }
}

/// `zeta = 0` at or above the melting point, 1 at or below `T_m - band`,
/// linear in between. A zero band gives a sharp switch.
#[inline]
pub fn zeta_of(t_k: f64, melt_k: f64, band_k: f64) -> f64 {
    if t_k >= melt_k {
        0.0
    } else if band_k <= 0.0 {
        1.0
    } else {
        ((melt_k - t_k) / band_k).min(1.0)
    }
}

pub fn zeta_from_temperature(temp: &TemperatureField, mat: &MaterialThermal, band_k: f64) -> SolidIndicator {
    SolidIndicator {
        spec: *temp.spec(),
        zeta: temp
            .values()
            .iter()
            .map(|&t| zeta_of(t as f64, mat.melt_k, band_k))
            .collect(),
    }
}

/// Zeroes the order parameters wherever `zeta == 0` and relabels those voxels
/// as liquid. Returns the number of voxels erased.
pub fn erase_melted(field: &mut GrainField, zeta: &SolidIndicator) -> Result<usize> {
    if field.spec().dims != zeta.spec.dims {
        return Err(Error::invalid("zeta and field dims differ"));
    }
    field.ensure_eta();
    let n = field.n_ori();
    let mut count = 0;
    let melted: Vec<usize> = zeta
        .zeta
        .iter()
        .enumerate()
        .filter(|(_, z)| **z == 0.0)
        .map(|(v, _)| v)
        .collect();
    let eta = field.eta_mut().expect("allocated above");
    for &v in &melted {
        eta[v * n..(v + 1) * n].iter_mut().for_each(|e| *e = 0.0);
        count += 1;
    }
    field.relabel_range(melted.into_iter());
    Ok(count)
}

/// Gradient of the local free-energy density (without the gradient term).
pub fn bulk_derivative(eta_v: &[f64], zeta: f64, p: &PFParams) -> Vec<f64> {
    let s: f64 = eta_v.iter().map(|e| e * e).sum();
    let melt = 2.0 * (1.0 - zeta).powi(2);
    eta_v
        .iter()
        .map(|&e| p.m_g * (e * e * e - e + 2.0 * p.gamma * e * (s - e * e) + melt * e))
        .collect()
}

/// One explicit step over the whole domain with uniform mobility.
pub fn step(field: &GrainField, zeta: &SolidIndicator, p: &PFParams) -> Result<GrainField> {
    let mut out = field.clone();
    let mut scratch = Vec::new();
    step_in_place(&mut out, zeta, p, &mut scratch)?;
    Ok(out)
}

/// In-place variant of [`step`]; `scratch` is reused between calls.
pub fn step_in_place(field: &mut GrainField, zeta: &SolidIndicator, p: &PFParams, scratch: &mut Vec<f64>) -> Result<()> {
    let spec = *field.spec();
    if spec.dims != zeta.spec.dims {
        return Err(Error::invalid("zeta and field dims differ"));
    }
    let full = VoxelBox::full(&spec);
    step_region(field, p, &full, &full, &zeta.zeta, None, scratch)
}

/// Explicit step restricted to `region`.
///
/// `zeta` and the optional relative `mobility` (scaling `L`) are laid out
/// x-fastest over `drive_box`, which must contain `region`. Voxels outside
/// `region` are left untouched, so restricting the region is exact whenever
/// the mobility vanishes outside it.
pub fn step_region(
    field: &mut GrainField,
    p: &PFParams,
    region: &VoxelBox,
    drive_box: &VoxelBox,
    zeta: &[f64],
    mobility: Option<&[f64]>,
    scratch: &mut Vec<f64>,
) -> Result<()> {
    if field.n_ori() != p.n_ori {
        return Err(Error::invalid(format!(
            "field has {} classes, parameters expect {}",
            field.n_ori(),
            p.n_ori
        )));
    }
    if region.is_empty() {
        return Ok(());
    }
    let spec = *field.spec();
    for k in 0..3 {
        if region.lo[k] < drive_box.lo[k] || region.hi[k] > drive_box.hi[k] || drive_box.hi[k] > spec.dims[k] {
            return Err(Error::invalid(format!("region {region:?} not inside drive box {drive_box:?}")));
        }
    }
    if zeta.len() != drive_box.len() || mobility.is_some_and(|m| m.len() != drive_box.len()) {
        return Err(Error::invalid("drive arrays do not match the drive box"));
    }
    field.ensure_eta();
    let n = p.n_ori;
    let [rx, ry, _] = region.dims();
    let [dbx, dby, _] = drive_box.dims();
    let plane = rx * ry * n;
    scratch.clear();
    scratch.resize(region.len() * n, 0.0);

    let inv_dx2 = 1.0 / p.dx_m().powi(2);
    let c = Coeffs {
        m: p.m_g,
        two_gamma: 2.0 * p.gamma,
        kappa_inv_dx2: p.kappa_g * inv_dx2,
        dt_l: p.dt_s * p.l_g,
    };
    let [nx, ny, nz] = spec.dims;
    let sx = 1;
    let sy = nx;
    let sz = nx * ny;
    let eta: &[f64] = field.eta().expect("allocated above");

    let bad = scratch
        .par_chunks_mut(plane)
        .enumerate()
        .map(|(dz, out_plane)| {
            let z = region.lo[2] + dz;
            let mut first_bad: Option<usize> = None;
            for dy in 0..ry {
                let y = region.lo[1] + dy;
                for dx in 0..rx {
                    let x = region.lo[0] + dx;
                    let v = x * sx + y * sy + z * sz;
                    let nb = [
                        if x > 0 { v - sx } else { v },
                        if x + 1 < nx { v + sx } else { v },
                        if y > 0 { v - sy } else { v },
                        if y + 1 < ny { v + sy } else { v },
                        if z > 0 { v - sz } else { v },
                        if z + 1 < nz { v + sz } else { v },
                    ];
                    let d = (x - drive_box.lo[0]) + dbx * ((y - drive_box.lo[1]) + dby * (z - drive_box.lo[2]));
                    let rate = match mobility {
                        Some(mob) => c.dt_l * mob[d],
                        None => c.dt_l,
                    };
                    let out = &mut out_plane[(dx + rx * dy) * n..(dx + rx * dy + 1) * n];
                    if !update_voxel(eta, n, v, &nb, zeta[d], rate, &c, out) && first_bad.is_none() {
                        first_bad = Some(v);
                    }
                }
            }
            first_bad
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .min();
    if let Some(voxel) = bad {
        return Err(Error::Numeric {
            voxel,
            message: "non-finite order parameter".into(),
        });
    }

    let eta = field.eta_mut().expect("allocated above");
    let row = rx * n;
    for dz in 0..region.dims()[2] {
        for dy in 0..ry {
            let start = spec.index(region.lo[0], region.lo[1] + dy, region.lo[2] + dz) * n;
            let src = (dy + ry * dz) * row;
            eta[start..start + row].copy_from_slice(&scratch[src..src + row]);
        }
    }
    field.relabel_range(region.indices(&spec));
    Ok(())
}

struct Coeffs {
    m: f64,
    two_gamma: f64,
    kappa_inv_dx2: f64,
    dt_l: f64,
}

/// Writes the updated order parameters of voxel `v` into `out`; returns
/// false when any result is non-finite.
#[inline(always)]
fn update_voxel(eta: &[f64], n: usize, v: usize, nb: &[usize; 6], zeta: f64, rate: f64, c: &Coeffs, out: &mut [f64]) -> bool {
    let cur = &eta[v * n..(v + 1) * n];
    let mut s = 0.0;
    for e in cur {
        s += e * e;
    }
    let melt = 2.0 * (1.0 - zeta) * (1.0 - zeta);
    let b: [&[f64]; 6] = nb.map(|u| &eta[u * n..(u + 1) * n]);
    let mut ok = true;
    for i in 0..n {
        let e = cur[i];
        let sum_nb = b[0][i] + b[1][i] + b[2][i] + b[3][i] + b[4][i] + b[5][i];
        let lap = sum_nb - 6.0 * e;
        let bulk = c.m * (e * e * e - e + c.two_gamma * e * (s - e * e) + melt * e);
        let next = e - rate * (bulk - c.kappa_inv_dx2 * lap);
        ok &= next.is_finite();
        out[i] = next;
    }
    ok
}

/// Discrete free energy (J): bulk density times voxel volume summed over
/// voxels plus `kappa/2 sum (d eta)^2 dx` over interior faces. Its gradient
/// with respect to each order parameter is exactly the update direction of
/// [`step`] scaled by the voxel volume.
pub fn energy(field: &GrainField, zeta: &SolidIndicator, p: &PFParams) -> Result<f64> {
    let spec = *field.spec();
    if spec.dims != zeta.spec.dims {
        return Err(Error::invalid("zeta and field dims differ"));
    }
    let owned;
    let eta = match field.eta() {
        Some(e) => e,
        None => {
            let mut f = field.clone();
            f.ensure_eta();
            owned = f;
            owned.eta().expect("allocated")
        }
    };
    let n = field.n_ori();
    let dx = p.dx_m();
    let vol = dx * dx * dx;
    let [nx, ny, nz] = spec.dims;
    let planes: Vec<f64> = (0..nz)
        .into_par_iter()
        .map(|z| {
            let mut bulk = 0.0;
            let mut grad = 0.0;
            for y in 0..ny {
                for x in 0..nx {
                    let v = spec.index(x, y, z);
                    let cur = &eta[v * n..(v + 1) * n];
                    let mut s = 0.0;
                    let mut quartic = 0.0;
                    let mut well = 0.0;
                    for &e in cur {
                        let e2 = e * e;
                        s += e2;
                        quartic += e2 * e2;
                        well += e2 * e2 / 4.0 - e2 / 2.0;
                    }
                    let cross = (s * s - quartic) / 2.0;
                    let zt = 1.0 - zeta.zeta[v];
                    bulk += well + p.gamma * cross + zt * zt * s + 0.25;
                    for (ok, u) in [(x + 1 < nx, v + 1), (y + 1 < ny, v + nx), (z + 1 < nz, v + nx * ny)] {
                        if ok {
                            let other = &eta[u * n..(u + 1) * n];
                            for i in 0..n {
                                let d = cur[i] - other[i];
                                grad += d * d;
                            }
                        }
                    }
                }
            }
            p.m_g * bulk * vol + 0.5 * p.kappa_g * grad * dx
        })
        .collect();
    Ok(planes.iter().sum())
}

/// Interface width estimate from a 1D profile of one order parameter that
/// rises from ~0 to ~1 (or falls): the distance between its 0.1 and 0.9
/// crossings divided by `atanh(0.8)`, which for the equilibrium
/// `(1 + tanh(2x/l))/2` profile recovers `l` exactly.
pub fn interface_width_um(profile: &[f64], dx_um: f64) -> Option<f64> {
    let crossing = |level: f64| -> Option<f64> {
        profile.windows(2).enumerate().find_map(|(i, w)| {
            let (a, b) = (w[0] - level, w[1] - level);
            if a == 0.0 {
                Some(i as f64)
            } else if a * b < 0.0 {
                Some(i as f64 + a / (a - b))
            } else {
                None
            }
        })
    };
    let lo = crossing(0.1)?;
    let hi = crossing(0.9)?;
    Some((hi - lo).abs() * dx_um / 0.8f64.atanh())
}

/// Maximum absolute difference between two fields' order parameters.
pub fn max_eta_change(a: &GrainField, b: &GrainField) -> Option<f64> {
    let (ea, eb) = (a.eta()?, b.eta()?);
    if ea.len() != eb.len() {
        return None;
    }
    Some(ea.iter().zip(eb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

/// Range of order-parameter values present in a field.
pub fn eta_bounds(field: &GrainField) -> Option<(f64, f64)> {
    let eta = field.eta()?;
    Some(eta.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &e| (lo.min(e), hi.max(e))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn params(n: usize) -> PFParams {
        PFParams::defaults(2.155, n).unwrap()
    }

    #[test]
    fn moelans_coefficients() {
        let p = params(20);
        let l = 9.6e-6;
        assert!((p.kappa_g - 0.75 * 0.5 * l).abs() < 1e-18);
        assert!((p.m_g - 6.0 * 0.5 / l).abs() < 1e-6);
        assert!((p.l_g - 4.0 * 1e-12 / (3.0 * l)).abs() < 1e-20);
        assert!((p.stability_number() - 0.125).abs() < 1e-12);
        // sqrt(8 kappa / m) is the width
        assert!(((8.0 * p.kappa_g / p.m_g).sqrt() - l).abs() < 1e-15);
    }

    #[test]
    fn unstable_dt_rejected() {
        let p = params(2);
        assert!(p.with_dt(p.stable_dt(0.3)).is_err());
        assert!(p.with_dt(p.stable_dt(0.25)).is_ok());
        assert!(PFParams::from_physical(0.5, 1e-12, 9.6, 2.0, 2, 0.5).is_err());
    }

    #[test]
    fn bulk_derivative_examples() {
        let p = params(4);
        let d = bulk_derivative(&[1.0, 0.0, 0.0, 0.0], 1.0, &p);
        assert!(d.iter().all(|&x| x == 0.0));
        let d = bulk_derivative(&[0.0; 4], 0.3, &p);
        assert!(d.iter().all(|&x| x == 0.0));
        let d = bulk_derivative(&[1.0, 0.0, 0.0, 0.0], 0.0, &p);
        assert!((d[0] - 2.0 * p.m_g).abs() < 1e-9 * p.m_g);
        assert_eq!(&d[1..], &[0.0; 3]);
    }

    #[test]
    fn bulk_derivative_matches_energy_density() {
        let p = params(3);
        let f = |e: &[f64], z: f64| {
            let s: f64 = e.iter().map(|x| x * x).sum();
            let q: f64 = e.iter().map(|x| x.powi(4)).sum();
            let well: f64 = e.iter().map(|x| x.powi(4) / 4.0 - x * x / 2.0).sum();
            p.m_g * (well + p.gamma * (s * s - q) / 2.0 + (1.0 - z).powi(2) * s + 0.25)
        };
        let e = [0.3, 0.6, 0.1];
        let d = bulk_derivative(&e, 0.4, &p);
        for i in 0..3 {
            let h = 1e-6;
            let mut a = e;
            let mut b = e;
            a[i] += h;
            b[i] -= h;
            let fd = (f(&a, 0.4) - f(&b, 0.4)) / (2.0 * h);
            assert!((fd - d[i]).abs() < 1e-6 * p.m_g, "{i}: {fd} vs {}", d[i]);
        }
    }

    #[test]
    fn zeta_rule() {
        assert_eq!(zeta_of(1800.0, 1700.0, 50.0), 0.0);
        assert_eq!(zeta_of(1700.0, 1700.0, 50.0), 0.0);
        assert_eq!(zeta_of(1650.0, 1700.0, 50.0), 1.0);
        assert_eq!(zeta_of(300.0, 1700.0, 50.0), 1.0);
        assert!((zeta_of(1675.0, 1700.0, 50.0) - 0.5).abs() < 1e-12);
        assert_eq!(zeta_of(1699.0, 1700.0, 0.0), 1.0);
    }

    #[test]
    fn hot_field_erases_order() {
        let spec = DomainSpec::from_dims([4, 4, 2], 2.0).unwrap();
        let mut f = GrainField::uniform(spec, 3, 1).unwrap();
        let t = TemperatureField::new(spec, vec![2000.0; spec.len()]).unwrap();
        let z = zeta_from_temperature(&t, &MaterialThermal::default(), 50.0);
        assert!(z.values().iter().all(|&v| v == 0.0));
        assert_eq!(erase_melted(&mut f, &z).unwrap(), spec.len());
        assert!(f.eta().unwrap().iter().all(|&e| e == 0.0));
        assert!(f.labels().iter().all(|&l| l == crate::domain::LIQUID));
    }

    #[test]
    fn uniform_grain_and_zero_field_are_fixed_points() {
        let spec = DomainSpec::from_dims([6, 5, 4], 2.155).unwrap();
        let p = params(5);
        let mut f = GrainField::uniform(spec, 5, 2).unwrap();
        f.ensure_eta();
        let z = SolidIndicator::solid(spec);
        let g = step(&f, &z, &p).unwrap();
        assert_eq!(g, f);
        let zero = GrainField::from_eta(spec, 5, vec![0.0; spec.len() * 5]).unwrap();
        assert_eq!(step(&zero, &z, &p).unwrap(), zero);
    }

    #[test]
    fn restricted_region_with_zero_mobility_outside_is_exact() {
        let spec = DomainSpec::from_dims([12, 10, 6], 2.155).unwrap();
        let f = crate::domain::generate_voronoi_microstructure(spec, 12, 4, 3).unwrap();
        let p = params(4);
        let region = VoxelBox { lo: [3, 2, 1], hi: [9, 8, 5] };
        let full = VoxelBox::full(&spec);
        let mut mob = vec![0.0; spec.len()];
        for v in region.indices(&spec) {
            mob[v] = 0.7;
        }
        let zeta = vec![1.0; spec.len()];
        let mut a = f.clone();
        let mut b = f.clone();
        let mut s = Vec::new();
        for _ in 0..5 {
            step_region(&mut a, &p, &full, &full, &zeta, Some(&mob), &mut s).unwrap();
            step_region(&mut b, &p, &region, &full, &zeta, Some(&mob), &mut s).unwrap();
        }
        assert_eq!(a, b);
        assert_ne!(a.eta(), {
            let mut g = f.clone();
            g.ensure_eta();
            g
        }
        .eta());
    }

    #[test]
    fn nan_reports_first_voxel() {
        let spec = DomainSpec::from_dims([4, 4, 1], 2.155).unwrap();
        let mut eta = vec![0.0; spec.len() * 2];
        eta[2 * 5] = f64::NAN;
        let f = GrainField::from_eta(spec, 2, eta).unwrap();
        match step(&f, &SolidIndicator::solid(spec), &params(2)) {
            Err(Error::Numeric { voxel, .. }) => assert_eq!(voxel, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn energy_gradient_matches_update() {
        // moving one order parameter against the update direction must
        // change the energy by dt-scaled squared gradient to first order
        let spec = DomainSpec::from_dims([5, 4, 3], 2.155).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let n = 3;
        let eta: Vec<f64> = (0..spec.len() * n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let f = GrainField::from_eta(spec, n, eta).unwrap();
        let zeta: Vec<f64> = (0..spec.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let z = SolidIndicator::new(spec, zeta).unwrap();
        let p = params(n);
        let g = step(&f, &z, &p).unwrap();
        let vol = p.dx_m().powi(3);
        for k in [0usize, 17, 59, 100, 179] {
            let grad = -(g.eta().unwrap()[k] - f.eta().unwrap()[k]) / (p.dt_s * p.l_g) * vol;
            let h = 1e-7;
            let mut a = f.eta().unwrap().to_vec();
            let mut b = a.clone();
            a[k] += h;
            b[k] -= h;
            let ea = energy(&GrainField::from_eta(spec, n, a).unwrap(), &z, &p).unwrap();
            let eb = energy(&GrainField::from_eta(spec, n, b).unwrap(), &z, &p).unwrap();
            let fd = (ea - eb) / (2.0 * h);
            assert!((fd - grad).abs() <= 1e-5 * grad.abs().max(p.m_g * vol), "{k}: {fd} vs {grad}");
        }
    }

    #[test]
    fn width_of_exact_profile() {
        let l = 9.6;
        let dx = 0.1;
        let profile: Vec<f64> = (0..400)
            .map(|i| 0.5 * (1.0 + (2.0 * (i as f64 * dx - 20.0) / l).tanh()))
            .collect();
        let w = interface_width_um(&profile, dx).unwrap();
        assert!((w - l).abs() < 1e-3, "{w}");
    }
}
