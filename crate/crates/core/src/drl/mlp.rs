//! Fully connected ReLU network with analytic gradients and Adam.

use rand::Rng;

use crate::error::{Error, Result};

/// Layers `sizes[0] -> sizes[1] -> ... -> sizes[L]`, ReLU on every hidden
/// layer, linear output. Parameters live in one flat vector: for each layer
/// the weight matrix (row-major, `out x in`) followed by its bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid(format!("bad layer sizes {sizes:?}")));
        }
        let n = sizes.windows(2).map(|w| w[1] * (w[0] + 1)).sum();
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; n],
        })
    }

    /// Uniform initialization in `±1/sqrt(fan_in)` for weights and biases.
    pub fn random(sizes: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let mut off = 0;
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for p in &mut net.params[off..off + w[1] * (w[0] + 1)] {
                *p = rng.gen_range(-bound..bound);
            }
            off += w[1] * (w[0] + 1);
        }
        Ok(net)
    }

    /// Q-network shape for an `n x n` grid.
    pub fn q_network(n: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        Self::random(&[n * n, hidden, hidden, 4], rng)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_len(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// (weight offset, bias offset) of layer `l`.
    fn offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for w in self.sizes.windows(2).take(l) {
            off += w[1] * (w[0] + 1);
        }
        (off, off + self.sizes[l + 1] * self.sizes[l])
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut acts = Vec::new();
        self.forward_cached(x, &mut acts);
        acts.pop().unwrap()
    }

    /// Forward pass keeping every layer's post-activation output;
    /// `acts[0]` is the input.
    fn forward_cached(&self, x: &[f64], acts: &mut Vec<Vec<f64>>) {
        assert_eq!(x.len(), self.sizes[0], "input length");
        acts.clear();
        acts.push(x.to_vec());
        let last = self.sizes.len() - 2;
        for l in 0..=last {
            let (wo, bo) = self.offsets(l);
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let mut y = self.params[bo..bo + n_out].to_vec();
            let input = &acts[l];
            let nonzero = input.iter().filter(|&&v| v != 0.0).count();
            if nonzero * 4 < n_in {
                // Sparse input (one-hot states): walk only the live columns.
                for (i, &xi) in input.iter().enumerate() {
                    if xi == 0.0 {
                        continue;
                    }
                    for (o, yo) in y.iter_mut().enumerate() {
                        *yo += self.params[wo + o * n_in + i] * xi;
                    }
                }
            } else {
                for (o, yo) in y.iter_mut().enumerate() {
                    *yo += dot(&self.params[wo + o * n_in..wo + (o + 1) * n_in], input);
                }
            }
            if l < last {
                for v in &mut y {
                    *v = v.max(0.0);
                }
            }
            acts.push(y);
        }
    }

    /// Mean squared error between the outputs selected by `actions` and
    /// `targets`, and its gradient with respect to every parameter
    /// (written to `grad`, which is resized).
    pub fn mse_loss_grad(&self, inputs: &[&[f64]], actions: &[usize], targets: &[f64], grad: &mut Vec<f64>) -> f64 {
        let b = inputs.len();
        assert!(b > 0 && actions.len() == b && targets.len() == b);
        grad.clear();
        grad.resize(self.params.len(), 0.0);
        let mut acts = Vec::new();
        let mut loss = 0.0;
        let layers = self.sizes.len() - 1;
        for k in 0..b {
            self.forward_cached(inputs[k], &mut acts);
            let q = &acts[layers];
            let err = q[actions[k]] - targets[k];
            loss += err * err;
            let mut delta = vec![0.0; self.output_len()];
            delta[actions[k]] = 2.0 * err / b as f64;
            self.backward(&acts, delta, grad);
        }
        loss / b as f64
    }

    /// Adds to `grad` the parameter gradient of `dot(dout, f(x))`.
    pub fn accumulate_grad(&self, x: &[f64], dout: &[f64], grad: &mut [f64]) {
        let mut acts = Vec::new();
        self.forward_cached(x, &mut acts);
        self.backward(&acts, dout.to_vec(), grad);
    }

    /// Forward pass returning every layer's activations, for
    /// [`Mlp::accumulate_grad_from`].
    pub fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::new();
        self.forward_cached(x, &mut acts);
        acts
    }

    /// [`Mlp::accumulate_grad`] with activations from [`Mlp::activations`].
    pub fn accumulate_grad_from(&self, acts: &[Vec<f64>], dout: &[f64], grad: &mut [f64]) {
        self.backward(acts, dout.to_vec(), grad);
    }

    fn backward(&self, acts: &[Vec<f64>], mut delta: Vec<f64>, grad: &mut [f64]) {
        let layers = self.sizes.len() - 1;
        for l in (0..layers).rev() {
            let (wo, bo) = self.offsets(l);
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let input = &acts[l];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                grad[bo + o] += d;
                let row = &mut grad[wo + o * n_in..wo + (o + 1) * n_in];
                for (g, &xi) in row.iter_mut().zip(input) {
                    *g += d * xi;
                }
            }
            if l > 0 {
                let mut prev = vec![0.0; n_in];
                for o in 0..n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &self.params[wo + o * n_in..wo + (o + 1) * n_in];
                    for (p, &w) in prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
                // ReLU derivative; zero at the kink.
                for (p, &a) in prev.iter_mut().zip(input) {
                    if a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }

    /// Loss only, for finite-difference checks.
    pub fn mse_loss(&self, inputs: &[&[f64]], actions: &[usize], targets: &[f64]) -> f64 {
        inputs
            .iter()
            .zip(actions)
            .zip(targets)
            .map(|((x, &a), &t)| (self.forward(x)[a] - t).powi(2))
            .sum::<f64>()
            / inputs.len() as f64
    }

    /// Multiplies the output layer's weights and biases by `c`.
    pub fn scale_output(&mut self, c: f64) {
        let l = self.sizes.len() - 2;
        let (wo, _) = self.offsets(l);
        for p in &mut self.params[wo..] {
            *p *= c;
        }
    }
}

/// Dot product with four independent partial sums.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, ra) = a.split_at(a.len() - a.len() % 4);
    let (cb, rb) = b.split_at(ca.len());
    for (x, y) in ca.chunks_exact(4).zip(cb.chunks_exact(4)) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Bias-corrected Adam state.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(&[25, 64, 64, 4]).unwrap();
        let mut x = vec![0.0; 25];
        x[0] = 1.0;
        assert_eq!(net.forward(&x), vec![0.0; 4]);
        assert_eq!(net.params().len(), 64 * 26 + 64 * 65 + 4 * 65);
    }

    #[test]
    fn hand_computed_forward() {
        // 2 -> 2 -> 1 with one hidden unit clipped by ReLU.
        let mut net = Mlp::zeros(&[2, 2, 1]).unwrap();
        net.params_mut().copy_from_slice(&[1.0, 2.0, -3.0, 1.0, 0.5, 0.0, 2.0, -1.0, 0.25]);
        // hidden = relu([1+4+0.5, -3+2+0]) = [5.5, 0]
        assert_eq!(net.forward(&[1.0, 2.0]), vec![2.0 * 5.5 + 0.25]);
    }

    #[test]
    fn output_scaling_scales_q() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Mlp::q_network(3, 16, &mut rng).unwrap();
        let x: Vec<f64> = (0..9).map(|i| if i == 4 { 1.0 } else { 0.0 }).collect();
        let q = net.forward(&x);
        net.scale_output(2.5);
        let q2 = net.forward(&x);
        for (a, b) in q.iter().zip(&q2) {
            assert!((a * 2.5 - b).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![1.0, -2.0];
        let mut opt = Adam::new(2, 0.1);
        opt.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-7);
        assert!((p[1] + 1.9).abs() < 1e-7);
    }
}
