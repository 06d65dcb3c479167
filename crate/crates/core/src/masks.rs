//! Gradient aggregation, agreement masks, and the focus vector.
//!
//! Given empirical gradients of the unlearning objective and the utility
//! constraint, these functions build update directions that stay negatively
//! aligned with both gradients:
//!
//! - the AND mask keeps a parameter only when both partial derivatives share
//!   a sign (strict product > 0);
//! - the agreement probability models each batch gradient as the true
//!   gradient plus independent Gaussian noise and scores how likely that
//!   sign agreement is to hold for the true gradients;
//! - the PROB mask thresholds that probability at a certainty level `p`;
//! - the Bernoulli mask samples each component with that probability;
//! - the focus vector uses the probability itself as a soft per-parameter
//!   weight (its conditional expectation);
//! - the saliency mask keeps parameters whose forget-gradient magnitude is
//!   at or above the median.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::optim::VarianceEstimate;
use crate::params::ParamVector;
use crate::stats::normal_cdf;

/// Empirical gradient pair with per-component variance estimates.
#[derive(Debug, Clone)]
pub struct GradientPair {
    pub g_u: ParamVector,
    pub g_c: ParamVector,
    pub sigma2_u: VarianceEstimate,
    pub sigma2_c: VarianceEstimate,
}

impl GradientPair {
    pub fn new(
        g_u: ParamVector,
        g_c: ParamVector,
        sigma2_u: VarianceEstimate,
        sigma2_c: VarianceEstimate,
    ) -> Result<Self> {
        let n = g_u.len();
        for len in [g_c.len(), sigma2_u.sigma2.len(), sigma2_c.sigma2.len()] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    context: "GradientPair",
                    expected: n,
                    actual: len,
                });
            }
        }
        Ok(Self {
            g_u,
            g_c,
            sigma2_u,
            sigma2_c,
        })
    }

    pub fn len(&self) -> usize {
        self.g_u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g_u.is_empty()
    }
}

/// How a per-parameter weight vector was built.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    And,
    Prob,
    Bernoulli,
    Focus,
    Salun,
    /// All-ones passthrough.
    None,
}

/// Per-component weights in [0, 1]: binary for every kind except `Focus`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskOrFocus {
    pub weights: Vec<f64>,
    pub kind: MaskKind,
}

impl MaskOrFocus {
    pub fn all_ones(n: usize) -> Self {
        Self {
            weights: vec![1.0; n],
            kind: MaskKind::None,
        }
    }

    /// Number of strictly positive weights (ℓ0 of the mask).
    pub fn count_selected(&self) -> usize {
        self.weights.iter().filter(|w| **w > 0.0).count()
    }

    pub fn validate(&self) -> Result<()> {
        let binary_required = self.kind != MaskKind::Focus;
        for &w in &self.weights {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::InvalidArgument(format!(
                    "mask weight {w} outside [0, 1]"
                )));
            }
            if binary_required && w != 0.0 && w != 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "non-binary weight {w} in a {:?} mask",
                    self.kind
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggKind {
    Linear,
    AbsMin,
}

/// Sign-invariant componentwise combiner of the two gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggSpec {
    pub kind: AggKind,
    pub alpha: f64,
    pub beta: f64,
}

impl AggSpec {
    pub fn linear(alpha: f64, beta: f64) -> Result<Self> {
        if alpha < 0.0 || beta < 0.0 || alpha + beta <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "linear aggregation needs alpha, beta >= 0 with alpha + beta > 0, got ({alpha}, {beta})"
            )));
        }
        Ok(Self {
            kind: AggKind::Linear,
            alpha,
            beta,
        })
    }

    pub fn abs_min() -> Self {
        Self {
            kind: AggKind::AbsMin,
            alpha: 0.0,
            beta: 0.0,
        }
    }
}

/// Componentwise aggregation: `alpha*x + beta*y`, or the component of
/// smaller magnitude (ties resolve to `g_u`'s value).
pub fn agg(spec: &AggSpec, g_u: &ParamVector, g_c: &ParamVector) -> Result<ParamVector> {
    if g_u.len() != g_c.len() {
        return Err(Error::DimensionMismatch {
            context: "agg",
            expected: g_u.len(),
            actual: g_c.len(),
        });
    }
    let values = match spec.kind {
        AggKind::Linear => g_u
            .iter()
            .zip(g_c.iter())
            .map(|(x, y)| spec.alpha * x + spec.beta * y)
            .collect(),
        AggKind::AbsMin => g_u
            .iter()
            .zip(g_c.iter())
            .map(|(&x, &y)| if y.abs() < x.abs() { y } else { x })
            .collect(),
    };
    Ok(ParamVector::from_vec(values))
}

/// Binary sign-agreement mask: 1 iff the componentwise product is strictly
/// positive (a zero component masks).
pub fn mask_and(g_u: &ParamVector, g_c: &ParamVector) -> Result<MaskOrFocus> {
    if g_u.len() != g_c.len() {
        return Err(Error::DimensionMismatch {
            context: "mask_and",
            expected: g_u.len(),
            actual: g_c.len(),
        });
    }
    let weights = g_u
        .iter()
        .zip(g_c.iter())
        .map(|(x, y)| if x * y > 0.0 { 1.0 } else { 0.0 })
        .collect();
    Ok(MaskOrFocus {
        weights,
        kind: MaskKind::And,
    })
}

/// Probability that the true gradient components agree in sign, given the
/// observed batch gradients and independent Gaussian estimation noise:
/// `f = phi_u * phi_c + (1 - phi_u)(1 - phi_c)` with
/// `phi = Phi(g_hat / sqrt(sigma2 + eps))`. `Phi` is [`normal_cdf`], whose
/// erf-based evaluation keeps the absolute error under 1e-12.
pub fn agree_prob(pair: &GradientPair, eps: f64) -> Vec<f64> {
    let n = pair.len();
    let mut f = Vec::with_capacity(n);
    for i in 0..n {
        let phi_u = normal_cdf(pair.g_u.as_slice()[i] / (pair.sigma2_u.sigma2.as_slice()[i] + eps).sqrt());
        let phi_c = normal_cdf(pair.g_c.as_slice()[i] / (pair.sigma2_c.sigma2.as_slice()[i] + eps).sqrt());
        f.push(phi_u * phi_c + (1.0 - phi_u) * (1.0 - phi_c));
    }
    f
}

/// Binary mask keeping components whose agreement probability strictly
/// exceeds the certainty level `p`.
pub fn mask_prob(pair: &GradientPair, p: f64, eps: f64) -> Result<MaskOrFocus> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "certainty level p must lie in (0, 1), got {p}"
        )));
    }
    let weights = agree_prob(pair, eps)
        .into_iter()
        .map(|f| if f > p { 1.0 } else { 0.0 })
        .collect();
    Ok(MaskOrFocus {
        weights,
        kind: MaskKind::Prob,
    })
}

/// Random binary mask: component i is kept with probability `f_i`.
pub fn mask_bernoulli(pair: &GradientPair, eps: f64, seed: u64) -> MaskOrFocus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = agree_prob(pair, eps)
        .into_iter()
        .map(|f| if rng.gen::<f64>() < f { 1.0 } else { 0.0 })
        .collect();
    MaskOrFocus {
        weights,
        kind: MaskKind::Bernoulli,
    }
}

/// Soft weighting by the agreement probability itself (the conditional
/// expectation of the Bernoulli mask).
pub fn focus_vector(pair: &GradientPair, eps: f64) -> MaskOrFocus {
    MaskOrFocus {
        weights: agree_prob(pair, eps),
        kind: MaskKind::Focus,
    }
}

/// Saliency mask over the forget-set ascent gradient: keep components whose
/// magnitude is at or above the median magnitude.
pub fn mask_salun(g_forget: &ParamVector) -> Result<MaskOrFocus> {
    if g_forget.is_empty() {
        return Err(Error::Empty("saliency gradient"));
    }
    let mut mags: Vec<f64> = g_forget.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| a.partial_cmp(b).expect("finite magnitudes"));
    let n = mags.len();
    let median = if n % 2 == 1 {
        mags[n / 2]
    } else {
        0.5 * (mags[n / 2 - 1] + mags[n / 2])
    };
    let weights = g_forget
        .iter()
        .map(|v| if v.abs() >= median { 1.0 } else { 0.0 })
        .collect();
    Ok(MaskOrFocus {
        weights,
        kind: MaskKind::Salun,
    })
}

/// Update direction `-weights ⊙ Agg(g_u, g_c)`.
pub fn update_direction(
    mask: &MaskOrFocus,
    spec: &AggSpec,
    g_u: &ParamVector,
    g_c: &ParamVector,
) -> Result<ParamVector> {
    let combined = agg(spec, g_u, g_c)?;
    if mask.weights.len() != combined.len() {
        return Err(Error::DimensionMismatch {
            context: "update_direction mask",
            expected: combined.len(),
            actual: mask.weights.len(),
        });
    }
    Ok(ParamVector::from_vec(
        mask.weights
            .iter()
            .zip(combined.iter())
            .map(|(w, g)| -w * g)
            .collect(),
    ))
}

/// Dump format for inspection: one `index,weight` row per component.
pub fn mask_to_csv(mask: &MaskOrFocus) -> String {
    let mut out = String::with_capacity(mask.weights.len() * 8);
    for (i, w) in mask.weights.iter().enumerate() {
        out.push_str(&format!("{i},{w}\n"));
    }
    out
}
