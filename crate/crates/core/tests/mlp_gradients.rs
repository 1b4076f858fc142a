use meltpath_core::drl::Mlp;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central differences of the batch loss against the analytic gradient.
fn check(net: &Mlp, inputs: &[Vec<f64>], actions: &[usize], targets: &[f64]) -> f64 {
    let xs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
    let mut grad = Vec::new();
    net.mse_loss_grad(&xs, actions, targets, &mut grad);
    let mut worst: f64 = 0.0;
    let h = 1e-6;
    for i in 0..net.params().len() {
        let mut plus = net.clone();
        plus.params_mut()[i] += h;
        let mut minus = net.clone();
        minus.params_mut()[i] -= h;
        let fd = (plus.mse_loss(&xs, actions, targets) - minus.mse_loss(&xs, actions, targets)) / (2.0 * h);
        let scale = fd.abs().max(grad[i].abs()).max(1e-3);
        worst = worst.max((fd - grad[i]).abs() / scale);
    }
    worst
}

#[test]
fn analytic_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for k in 0..10 {
        let n_in = rng.gen_range(2..7);
        let h = rng.gen_range(3..9);
        let net = Mlp::random(&[n_in, h, h, 4], &mut rng).unwrap();
        let b = rng.gen_range(1..6);
        let inputs: Vec<Vec<f64>> = (0..b)
            .map(|_| (0..n_in).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let actions: Vec<usize> = (0..b).map(|_| rng.gen_range(0..4)).collect();
        let targets: Vec<f64> = (0..b).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let err = check(&net, &inputs, &actions, &targets);
        assert!(err < 1e-4, "net {k}: worst relative error {err}");
    }
}
