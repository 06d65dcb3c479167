//! Parameter updates and gradient-noise variance estimation.
//!
//! Two variance providers back the probabilistic masks:
//! - [`AdamState::variance_estimate`]: cheap, derived from the Adam moment
//!   accumulators (bias-corrected `v - m^2`, floored at 0);
//! - [`per_batch_variance`]: exact, from per-example gradients (sample
//!   variance across the batch divided by the batch size, i.e. the variance
//!   of the batch-mean gradient).

use crate::error::{Error, Result};
use crate::params::ParamVector;

/// Componentwise variance of the batch-gradient estimate (diagonal Σ).
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceEstimate {
    pub sigma2: ParamVector,
}

/// Exponential-moving-average moment tracker (Adam bookkeeping).
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ParamVector,
    pub v: ParamVector,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(dim: usize, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(Error::InvalidArgument(format!(
                "betas must lie in [0, 1), got beta1={beta1}, beta2={beta2}"
            )));
        }
        if eps <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "eps must be positive, got {eps}"
            )));
        }
        Ok(Self {
            m: ParamVector::zeros(dim),
            v: ParamVector::zeros(dim),
            step_count: 0,
            beta1,
            beta2,
            eps,
        })
    }

    /// Standard defaults: beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    pub fn with_defaults(dim: usize) -> Self {
        Self::new(dim, 0.9, 0.999, 1e-8).expect("default Adam hyperparameters")
    }

    /// Pure transition: fold one gradient observation into the moments.
    pub fn update(&self, grad: &ParamVector) -> Result<AdamState> {
        if grad.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                context: "adam_update gradient",
                expected: self.m.len(),
                actual: grad.len(),
            });
        }
        let m = ParamVector::from_vec(
            self.m
                .iter()
                .zip(grad.iter())
                .map(|(m, g)| self.beta1 * m + (1.0 - self.beta1) * g)
                .collect(),
        );
        let v = ParamVector::from_vec(
            self.v
                .iter()
                .zip(grad.iter())
                .map(|(v, g)| self.beta2 * v + (1.0 - self.beta2) * g * g)
                .collect(),
        );
        Ok(AdamState {
            m,
            v,
            step_count: self.step_count + 1,
            ..*self
        })
    }

    /// Bias-corrected moments.
    pub fn corrected(&self) -> Result<(ParamVector, ParamVector)> {
        if self.step_count == 0 {
            return Err(Error::NoStatistics);
        }
        let c1 = 1.0 - self.beta1.powi(self.step_count as i32);
        let c2 = 1.0 - self.beta2.powi(self.step_count as i32);
        Ok((self.m.scaled(1.0 / c1), self.v.scaled(1.0 / c2)))
    }

    /// Moment-based variance of the observed gradient stream:
    /// `max(0, v_hat - m_hat^2)` componentwise.
    pub fn variance_estimate(&self) -> Result<VarianceEstimate> {
        let (m_hat, v_hat) = self.corrected()?;
        let sigma2 = ParamVector::from_vec(
            m_hat
                .iter()
                .zip(v_hat.iter())
                .map(|(m, v)| (v - m * m).max(0.0))
                .collect(),
        );
        Ok(VarianceEstimate { sigma2 })
    }
}

/// `theta + eta * direction`, rejecting non-finite directions.
pub fn sgd_step(theta: &ParamVector, direction: &ParamVector, eta: f64) -> Result<ParamVector> {
    if eta <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be positive, got {eta}"
        )));
    }
    if !direction.is_finite() {
        return Err(Error::NonFinite {
            context: "sgd_step direction",
            detail: "direction contains NaN or infinite components".into(),
        });
    }
    theta.add_scaled(direction, eta)
}

/// Variance of the batch-mean gradient from per-example gradients:
/// Bessel-corrected sample variance across examples, divided by `batch_size`.
pub fn per_batch_variance(
    per_example: &[ParamVector],
    batch_size: usize,
) -> Result<VarianceEstimate> {
    if per_example.len() < 2 {
        return Err(Error::InvalidArgument(
            "per_batch_variance needs at least 2 per-example gradients".into(),
        ));
    }
    let n = per_example[0].len();
    let count = per_example.len() as f64;
    let mut mean = vec![0.0; n];
    for g in per_example {
        if g.len() != n {
            return Err(Error::DimensionMismatch {
                context: "per_batch_variance gradients",
                expected: n,
                actual: g.len(),
            });
        }
        for (m, x) in mean.iter_mut().zip(g.iter()) {
            *m += x;
        }
    }
    for m in mean.iter_mut() {
        *m /= count;
    }
    let mut var = vec![0.0; n];
    for g in per_example {
        for ((v, x), m) in var.iter_mut().zip(g.iter()).zip(&mean) {
            let d = x - m;
            *v += d * d;
        }
    }
    let scale = 1.0 / ((count - 1.0) * batch_size as f64);
    for v in var.iter_mut() {
        *v *= scale;
    }
    Ok(VarianceEstimate {
        sigma2: ParamVector::from_vec(var),
    })
}
