//! Shared oracles for the property and acceptance suites. Everything here
//! is independent of the library's analytic code paths: gradients come from
//! central finite differences, probabilities from Monte Carlo draws, and
//! the equilibrium test from a hand-rolled projected descent.

// Each test binary uses its own subset of these oracles.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use unlearn_lab::matrix::Matrix;
use unlearn_lab::nn::{loss_value, LabeledBatch, LossKind, ModelSpec};
use unlearn_lab::params::ParamVector;
use unlearn_lab::Activation;

/// Central finite differences of the mean batch loss.
pub fn finite_diff_grad(
    spec: &ModelSpec,
    theta: &ParamVector,
    batch: &LabeledBatch,
    kind: LossKind,
    reference: Option<&ParamVector>,
    step: f64,
) -> ParamVector {
    let mut grad = Vec::with_capacity(theta.len());
    let mut probe = theta.clone();
    for i in 0..theta.len() {
        let orig = probe.as_slice()[i];
        probe.as_mut_slice()[i] = orig + step;
        let plus = loss_value(spec, &probe, batch, kind, reference).expect("loss+");
        probe.as_mut_slice()[i] = orig - step;
        let minus = loss_value(spec, &probe, batch, kind, reference).expect("loss-");
        probe.as_mut_slice()[i] = orig;
        grad.push((plus - minus) / (2.0 * step));
    }
    ParamVector::from_vec(grad)
}

pub fn random_model(rng: &mut ChaCha8Rng) -> ModelSpec {
    let input_dim = rng.gen_range(2..=6);
    let hidden: Vec<usize> = match rng.gen_range(0..3) {
        0 => vec![],
        1 => vec![rng.gen_range(2..=8)],
        _ => vec![rng.gen_range(2..=6), rng.gen_range(2..=6)],
    };
    let num_classes = rng.gen_range(2..=4);
    let activation = if rng.gen_bool(0.5) {
        Activation::Tanh
    } else {
        Activation::Relu
    };
    ModelSpec::new(input_dim, hidden, num_classes, activation).expect("random model")
}

pub fn random_theta(spec: &ModelSpec, rng: &mut ChaCha8Rng) -> ParamVector {
    ParamVector::from_vec(
        (0..spec.param_count())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect(),
    )
}

pub fn random_batch(spec: &ModelSpec, size: usize, rng: &mut ChaCha8Rng) -> LabeledBatch {
    let rows: Vec<Vec<f64>> = (0..size)
        .map(|_| (0..spec.input_dim).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let labels: Vec<usize> = (0..size).map(|_| rng.gen_range(0..spec.num_classes)).collect();
    LabeledBatch::new(Matrix::from_rows(&rows).expect("rows"), labels).expect("batch")
}

/// Monte Carlo estimate of P[g_u * g_c > 0 | observed] under the Gaussian
/// noise model: g = observed - noise, noise ~ N(0, sigma^2).
pub fn mc_sign_agreement(
    g_u_hat: f64,
    g_c_hat: f64,
    sigma_u: f64,
    sigma_c: f64,
    draws: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_u = Normal::new(0.0, sigma_u).expect("sigma_u");
    let n_c = Normal::new(0.0, sigma_c).expect("sigma_c");
    let mut agree = 0usize;
    for _ in 0..draws {
        let g_u = g_u_hat - n_u.sample(&mut rng);
        let g_c = g_c_hat - n_c.sample(&mut rng);
        if g_u * g_c > 0.0 {
            agree += 1;
        }
    }
    agree as f64 / draws as f64
}

/// 2-D constrained toy problem: minimize 0.5*|theta - target|^2 subject to
/// a.theta + b <= 0, solved by projected gradient descent.
pub struct ToyProblem {
    pub target: [f64; 2],
    pub a: [f64; 2],
    pub b: f64,
}

impl ToyProblem {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        // Normal vector away from zero; target placed strictly infeasible so
        // the constraint is active at the optimum.
        let a = [rng.gen_range(0.2..2.0), rng.gen_range(-2.0..2.0)];
        let b = rng.gen_range(-1.0..1.0);
        let norm2 = a[0] * a[0] + a[1] * a[1];
        let mut target = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
        let margin = a[0] * target[0] + a[1] * target[1] + b;
        if margin <= 0.5 {
            // Push the target outside the halfspace.
            let shift = (0.5 - margin) / norm2 + 0.5;
            target[0] += shift * a[0];
            target[1] += shift * a[1];
        }
        Self { target, a, b }
    }

    pub fn constraint(&self, theta: [f64; 2]) -> f64 {
        self.a[0] * theta[0] + self.a[1] * theta[1] + self.b
    }

    pub fn grad_u(&self, theta: [f64; 2]) -> [f64; 2] {
        [theta[0] - self.target[0], theta[1] - self.target[1]]
    }

    pub fn grad_c(&self) -> [f64; 2] {
        self.a
    }

    fn project(&self, theta: [f64; 2]) -> [f64; 2] {
        let violation = self.constraint(theta);
        if violation <= 0.0 {
            return theta;
        }
        let norm2 = self.a[0] * self.a[0] + self.a[1] * self.a[1];
        [
            theta[0] - violation / norm2 * self.a[0],
            theta[1] - violation / norm2 * self.a[1],
        ]
    }

    /// Projected gradient descent to convergence.
    pub fn solve(&self, iters: usize, lr: f64) -> [f64; 2] {
        let mut theta = self.project([0.0, 0.0]);
        for _ in 0..iters {
            let g = self.grad_u(theta);
            theta = self.project([theta[0] - lr * g[0], theta[1] - lr * g[1]]);
        }
        theta
    }
}
