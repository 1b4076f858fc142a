use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use meltpath_core::domain::{DomainSpec, GrainField};
use meltpath_core::phasefield::{
    energy, eta_bounds, interface_width_um, max_eta_change, step_in_place, PFParams, SolidIndicator,
    MAX_STABILITY_FACTOR,
};

fn random_field(dims: [usize; 3], n: usize, seed: u64) -> GrainField {
    let spec = DomainSpec::from_dims(dims, 2.155).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = (0..spec.len()).map(|_| rng.gen_range(0..n as i32)).collect();
    let mut f = GrainField::from_labels(spec, n, labels).unwrap();
    f.ensure_eta();
    f
}

#[test]
fn single_grain_is_stationary() {
    let spec = DomainSpec::from_dims([12, 12, 12], 2.155).unwrap();
    let p = PFParams::defaults(spec.voxel_um, 20).unwrap();
    let mut f = GrainField::uniform(spec, 20, 3).unwrap();
    f.ensure_eta();
    let zeta = SolidIndicator::solid(spec);
    let mut scratch = Vec::new();
    for _ in 0..10 {
        let before = f.clone();
        step_in_place(&mut f, &zeta, &p, &mut scratch).unwrap();
        assert!(max_eta_change(&before, &f).unwrap() < 1e-12);
    }
}

#[test]
fn flat_boundary_relaxes_to_target_width() {
    let n = 80;
    let spec = DomainSpec::from_dims([n, 1, 1], 2.155).unwrap();
    let p = PFParams::defaults(spec.voxel_um, 2).unwrap();
    let labels = (0..n).map(|x| i32::from(x >= n / 2)).collect();
    let mut f = GrainField::from_labels(spec, 2, labels).unwrap();
    f.ensure_eta();
    let zeta = SolidIndicator::solid(spec);
    let mut scratch = Vec::new();
    for _ in 0..10_000 {
        step_in_place(&mut f, &zeta, &p, &mut scratch).unwrap();
    }
    let profile: Vec<f64> = f.eta().unwrap().chunks(2).map(|e| e[1]).collect();
    let w = interface_width_um(&profile, spec.voxel_um).unwrap();
    assert!((w - p.boundary_width_um).abs() / p.boundary_width_um <= 0.15, "width {w}");
}

#[test]
fn energy_never_rises_on_rough_field() {
    let mut f = random_field([12, 12, 12], 8, 7);
    let spec = *f.spec();
    let p = PFParams::defaults(spec.voxel_um, 8).unwrap();
    let p = p.with_dt(0.5 * p.stable_dt(MAX_STABILITY_FACTOR)).unwrap();
    let zeta = SolidIndicator::solid(spec);
    let mut scratch = Vec::new();
    let mut prev = energy(&f, &zeta, &p).unwrap();
    for _ in 0..200 {
        step_in_place(&mut f, &zeta, &p, &mut scratch).unwrap();
        let e = energy(&f, &zeta, &p).unwrap();
        assert!(e <= prev * (1.0 + 1e-9), "{prev} -> {e}");
        prev = e;
    }
}

#[test]
fn small_disc_shrinks_monotonically() {
    let (n, r) = (40usize, 10.0);
    let spec = DomainSpec::from_dims([n, n, 1], 2.155).unwrap();
    let p = PFParams::defaults(spec.voxel_um, 2).unwrap();
    let c = (n as f64 - 1.0) / 2.0;
    let labels = (0..n * n)
        .map(|v| {
            let (x, y) = ((v % n) as f64 - c, (v / n) as f64 - c);
            i32::from(x * x + y * y <= r * r)
        })
        .collect();
    let mut f = GrainField::from_labels(spec, 2, labels).unwrap();
    f.ensure_eta();
    let zeta = SolidIndicator::solid(spec);
    let mut scratch = Vec::new();
    let area = |f: &GrainField| f.eta().unwrap().chunks(2).filter(|e| e[1] > 0.5).count();
    let mut last = area(&f);
    let mut steps = 0;
    while last > 0 {
        for _ in 0..50 {
            step_in_place(&mut f, &zeta, &p, &mut scratch).unwrap();
        }
        steps += 50;
        let a = area(&f);
        assert!(a <= last, "area grew {last} -> {a} at step {steps}");
        last = a;
        assert!(steps < 100_000, "disc did not vanish");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn order_parameters_stay_bounded(seed in 0u64..10_000, n in 2usize..6) {
        let mut f = random_field([8, 8, 4], n, seed);
        let spec = *f.spec();
        let p = PFParams::defaults(spec.voxel_um, n).unwrap();
        let zeta = SolidIndicator::solid(spec);
        let mut scratch = Vec::new();
        for _ in 0..50 {
            step_in_place(&mut f, &zeta, &p, &mut scratch).unwrap();
        }
        let (lo, hi) = eta_bounds(&f).unwrap();
        prop_assert!(lo >= -1e-6 && hi <= 1.0 + 1e-6, "bounds {lo} {hi}");
    }
}
