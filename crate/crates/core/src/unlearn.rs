//! Constrained-optimization unlearning: method registry, step rule, run loop.
//!
//! A method is a pair of losses over datasets: an unlearning objective
//! (L_U over D_U) and an optional utility constraint (L_C over D_C, measured
//! relative to the initial model). Every step draws one batch per dataset,
//! computes both gradients, applies the configured add-on (mask or focus
//! weighting) to the aggregated direction, and takes an SGD step. Adam-style
//! moment trackers run alongside purely to supply gradient-variance
//! estimates; the parameter update itself is plain SGD.

use std::collections::VecDeque;
use std::time::Instant;

use crate::data::{batches, randomize_labels, DatasetSplit};
use crate::error::{Error, Result};
use crate::masks::{
    agree_prob, focus_vector, mask_and, mask_bernoulli, mask_prob, mask_salun, update_direction,
    AggSpec, GradientPair, MaskOrFocus,
};
use crate::metrics::{report, MetricsReport};
use crate::nn::{grad, loss_value, per_example_grads, LabeledBatch, LossKind, ModelSpec};
use crate::optim::{per_batch_variance, sgd_step, AdamState, VarianceEstimate};
use crate::params::ParamVector;
use crate::seeding::{derive_seed, streams};

/// Registered first-order unlearning methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MethodName {
    Ft,
    Ga,
    NgPlus,
    Srl,
    L1Sparse,
    Scrub,
}

pub const ALL_METHODS: [MethodName; 6] = [
    MethodName::Ft,
    MethodName::Ga,
    MethodName::NgPlus,
    MethodName::Srl,
    MethodName::L1Sparse,
    MethodName::Scrub,
];

impl std::fmt::Display for MethodName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            MethodName::Ft => "FT",
            MethodName::Ga => "GA",
            MethodName::NgPlus => "NGPlus",
            MethodName::Srl => "SRL",
            MethodName::L1Sparse => "L1Sparse",
            MethodName::Scrub => "SCRUB",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for MethodName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "FT" => Ok(MethodName::Ft),
            "GA" => Ok(MethodName::Ga),
            "NGPlus" => Ok(MethodName::NgPlus),
            "SRL" => Ok(MethodName::Srl),
            "L1Sparse" => Ok(MethodName::L1Sparse),
            "SCRUB" => Ok(MethodName::Scrub),
            other => Err(Error::InvalidArgument(format!(
                "unknown method `{other}` (expected FT|GA|NGPlus|SRL|L1Sparse|SCRUB)"
            ))),
        }
    }
}

/// Which dataset a loss runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataRole {
    Retain,
    Forget,
    /// The whole training set with forget-set labels randomized.
    RelabeledTrain,
}

/// A method resolved into losses, datasets, and constants.
#[derive(Debug, Clone)]
pub struct UnlearnMethodSpec {
    pub name: MethodName,
    pub loss_u: LossKind,
    pub dataset_u: DataRole,
    pub loss_c: Option<LossKind>,
    pub dataset_c: Option<DataRole>,
    /// Weight of the cross-entropy term in SCRUB's constraint.
    pub gamma: f64,
    /// Initial parameters, referenced by the KL losses.
    pub reference_theta: Option<ParamVector>,
}

impl UnlearnMethodSpec {
    pub fn for_method(
        name: MethodName,
        gamma: f64,
        reference_theta: Option<ParamVector>,
    ) -> Result<Self> {
        if gamma < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "gamma must be nonnegative, got {gamma}"
            )));
        }
        let (loss_u, dataset_u, loss_c, dataset_c) = match name {
            MethodName::Ft => (LossKind::CrossEntropy, DataRole::Retain, None, None),
            MethodName::Ga => (LossKind::NegativeCrossEntropy, DataRole::Forget, None, None),
            MethodName::NgPlus => (
                LossKind::NegativeCrossEntropy,
                DataRole::Forget,
                Some(LossKind::CrossEntropy),
                Some(DataRole::Retain),
            ),
            MethodName::Srl => (
                LossKind::CrossEntropy,
                DataRole::RelabeledTrain,
                Some(LossKind::CrossEntropy),
                Some(DataRole::Retain),
            ),
            MethodName::L1Sparse => (
                LossKind::L1ParamNorm,
                DataRole::Retain,
                Some(LossKind::CrossEntropy),
                Some(DataRole::Retain),
            ),
            MethodName::Scrub => (
                LossKind::NegativeKlToReference,
                DataRole::Forget,
                Some(LossKind::KlToReference),
                Some(DataRole::Retain),
            ),
        };
        let needs_reference = loss_u.needs_reference()
            || loss_c.map(LossKind::needs_reference).unwrap_or(false);
        if needs_reference && reference_theta.is_none() {
            return Err(Error::MissingReference("method registry"));
        }
        Ok(Self {
            name,
            loss_u,
            dataset_u,
            loss_c,
            dataset_c,
            gamma,
            reference_theta,
        })
    }

    pub fn has_constraint(&self) -> bool {
        self.loss_c.is_some()
    }

    pub fn objective_grad(
        &self,
        model: &ModelSpec,
        theta: &ParamVector,
        batch: &LabeledBatch,
    ) -> Result<ParamVector> {
        grad(model, theta, batch, self.loss_u, self.reference_theta.as_ref())
    }

    pub fn objective_loss(
        &self,
        model: &ModelSpec,
        theta: &ParamVector,
        batch: &LabeledBatch,
    ) -> Result<f64> {
        loss_value(model, theta, batch, self.loss_u, self.reference_theta.as_ref())
    }

    /// Gradient of L_C; for SCRUB the constraint is KL + gamma * cross-entropy.
    pub fn constraint_grad(
        &self,
        model: &ModelSpec,
        theta: &ParamVector,
        batch: &LabeledBatch,
    ) -> Result<ParamVector> {
        let loss_c = self.loss_c.ok_or(Error::NullConstraint(self.name_str()))?;
        let base = grad(model, theta, batch, loss_c, self.reference_theta.as_ref())?;
        if self.name == MethodName::Scrub && self.gamma != 0.0 {
            let ce = grad(model, theta, batch, LossKind::CrossEntropy, None)?;
            return base.add_scaled(&ce, self.gamma);
        }
        Ok(base)
    }

    /// Value of L_C over the batch (not yet differenced against theta_0).
    pub fn constraint_loss(
        &self,
        model: &ModelSpec,
        theta: &ParamVector,
        batch: &LabeledBatch,
    ) -> Result<f64> {
        let loss_c = self.loss_c.ok_or(Error::NullConstraint(self.name_str()))?;
        let mut value = loss_value(model, theta, batch, loss_c, self.reference_theta.as_ref())?;
        if self.name == MethodName::Scrub && self.gamma != 0.0 {
            value += self.gamma * loss_value(model, theta, batch, LossKind::CrossEntropy, None)?;
        }
        Ok(value)
    }

    fn name_str(&self) -> &'static str {
        match self.name {
            MethodName::Ft => "FT",
            MethodName::Ga => "GA",
            MethodName::NgPlus => "NGPlus",
            MethodName::Srl => "SRL",
            MethodName::L1Sparse => "L1Sparse",
            MethodName::Scrub => "SCRUB",
        }
    }
}

/// Constraint value C(theta) = E[L_C(theta)] - E[L_C(theta_0)] over a batch
/// from D_C. Exactly zero at theta = theta_0.
pub fn constraint_value(
    method: &UnlearnMethodSpec,
    model: &ModelSpec,
    theta: &ParamVector,
    theta0: &ParamVector,
    batch_c: &LabeledBatch,
) -> Result<f64> {
    let at_theta = method.constraint_loss(model, theta, batch_c)?;
    let at_theta0 = method.constraint_loss(model, theta0, batch_c)?;
    Ok(at_theta - at_theta0)
}

/// Mask add-ons that can be plugged into any method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AddOnKind {
    None,
    Salun,
    And,
    Prob,
    Bernoulli,
    Focus,
}

pub const ALL_ADDONS: [AddOnKind; 6] = [
    AddOnKind::None,
    AddOnKind::Salun,
    AddOnKind::And,
    AddOnKind::Prob,
    AddOnKind::Bernoulli,
    AddOnKind::Focus,
];

impl AddOnKind {
    /// Add-ons built from the agreement probability need both gradients.
    pub fn needs_constraint(self) -> bool {
        matches!(
            self,
            AddOnKind::And | AddOnKind::Prob | AddOnKind::Bernoulli | AddOnKind::Focus
        )
    }
}

impl std::fmt::Display for AddOnKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AddOnKind::None => "none",
            AddOnKind::Salun => "salun",
            AddOnKind::And => "and",
            AddOnKind::Prob => "prob",
            AddOnKind::Bernoulli => "bernoulli",
            AddOnKind::Focus => "focus",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for AddOnKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AddOnKind::None),
            "salun" => Ok(AddOnKind::Salun),
            "and" => Ok(AddOnKind::And),
            "prob" => Ok(AddOnKind::Prob),
            "bernoulli" => Ok(AddOnKind::Bernoulli),
            "focus" => Ok(AddOnKind::Focus),
            other => Err(Error::InvalidArgument(format!(
                "unknown add-on `{other}` (expected none|salun|and|prob|bernoulli|focus)"
            ))),
        }
    }
}

/// Where the variance estimates for PROB/Bernoulli/Focus come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceProvider {
    /// Bias-corrected Adam moments (cheap, tracked across steps).
    Adam,
    /// Exact per-example gradients of the current batch.
    PerExample,
}

impl std::fmt::Display for VarianceProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            VarianceProvider::Adam => write!(f, "adam"),
            VarianceProvider::PerExample => write!(f, "per_example"),
        }
    }
}

impl std::str::FromStr for VarianceProvider {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(VarianceProvider::Adam),
            "per_example" => Ok(VarianceProvider::PerExample),
            other => Err(Error::InvalidArgument(format!(
                "unknown variance provider `{other}` (expected adam|per_example)"
            ))),
        }
    }
}

/// An add-on with its parameters.
#[derive(Debug, Clone)]
pub struct AddOnSpec {
    pub kind: AddOnKind,
    /// Certainty level; present iff kind = Prob.
    pub p: Option<f64>,
    pub agg: AggSpec,
    pub variance_provider: VarianceProvider,
}

impl AddOnSpec {
    pub fn new(kind: AddOnKind, p: Option<f64>, agg: AggSpec) -> Result<Self> {
        match (kind, p) {
            (AddOnKind::Prob, Some(p)) if p > 0.0 && p < 1.0 => {}
            (AddOnKind::Prob, Some(p)) => {
                return Err(Error::InvalidArgument(format!(
                    "certainty level p must lie in (0, 1), got {p}"
                )))
            }
            (AddOnKind::Prob, None) => {
                return Err(Error::InvalidArgument(
                    "the prob add-on needs a certainty level p".into(),
                ))
            }
            (_, Some(_)) => {
                return Err(Error::InvalidArgument(
                    "p is only meaningful for the prob add-on".into(),
                ))
            }
            (_, None) => {}
        }
        Ok(Self {
            kind,
            p,
            agg,
            variance_provider: VarianceProvider::Adam,
        })
    }

    pub fn with_provider(mut self, provider: VarianceProvider) -> Self {
        self.variance_provider = provider;
        self
    }

    /// Config-time compatibility check against a method.
    pub fn validate_for(&self, method: &UnlearnMethodSpec) -> Result<()> {
        if self.kind.needs_constraint() && !method.has_constraint() {
            return Err(Error::IncompatibleAddOn {
                addon: self.kind.to_string(),
                method: method.name.to_string(),
                reason: "the add-on needs a constraint gradient but the method has none".into(),
            });
        }
        Ok(())
    }
}

/// Mutable state of one unlearning run.
#[derive(Debug, Clone)]
pub struct UnlearnRunState {
    pub theta_u: ParamVector,
    pub adam_u: AdamState,
    pub adam_c: Option<AdamState>,
    pub epoch: usize,
    pub batch_index: usize,
    pub step_counter: u64,
    /// Base seed for the per-step Bernoulli mask draws.
    pub bernoulli_seed: u64,
    /// SalUn mask fixed at run start (None for other add-ons).
    pub salun_mask: Option<MaskOrFocus>,
    /// Accumulated wall-clock unlearning time (metrics excluded).
    pub rte_seconds: f64,
}

impl UnlearnRunState {
    pub fn new(theta0: ParamVector, has_constraint: bool, bernoulli_seed: u64) -> Self {
        let n = theta0.len();
        Self {
            theta_u: theta0,
            adam_u: AdamState::with_defaults(n),
            adam_c: has_constraint.then(|| AdamState::with_defaults(n)),
            epoch: 0,
            batch_index: 0,
            step_counter: 0,
            bernoulli_seed,
            salun_mask: None,
            rte_seconds: 0.0,
        }
    }
}

/// Immutable inputs of one step.
pub struct StepContext<'a> {
    pub model: &'a ModelSpec,
    pub method: &'a UnlearnMethodSpec,
    pub addon: &'a AddOnSpec,
    pub eta: f64,
    pub eps: f64,
}

/// Observability data from one step.
#[derive(Debug, Clone, Default)]
pub struct StepTrace {
    /// Inner product of the two empirical gradients (None without constraint).
    pub g_u_dot_g_c: Option<f64>,
    /// Agreement probabilities, filled only when capture was requested.
    pub agree_weights: Option<Vec<f64>>,
}

fn variance_pair(
    ctx: &StepContext,
    state_theta: &ParamVector,
    batch_u: &LabeledBatch,
    batch_c: &LabeledBatch,
    adam_u: &AdamState,
    adam_c: &AdamState,
) -> Result<(VarianceEstimate, VarianceEstimate)> {
    match ctx.addon.variance_provider {
        VarianceProvider::Adam => Ok((adam_u.variance_estimate()?, adam_c.variance_estimate()?)),
        VarianceProvider::PerExample => {
            // A singleton batch (possible as the short last chunk of an
            // epoch) carries no spread estimate; treat it as noiseless,
            // which reduces the probabilistic masks to sign agreement for
            // that step.
            let exact = |per: Vec<ParamVector>| -> Result<VarianceEstimate> {
                if per.len() < 2 {
                    return Ok(VarianceEstimate {
                        sigma2: ParamVector::zeros(per[0].len()),
                    });
                }
                let b = per.len();
                per_batch_variance(&per, b)
            };
            let per_u = per_example_grads(
                ctx.model,
                state_theta,
                batch_u,
                ctx.method.loss_u,
                ctx.method.reference_theta.as_ref(),
            )?;
            let per_c = constraint_per_example(ctx, state_theta, batch_c)?;
            Ok((exact(per_u)?, exact(per_c)?))
        }
    }
}

// Per-example constraint gradients; SCRUB composes KL + gamma * CE per example.
fn constraint_per_example(
    ctx: &StepContext,
    theta: &ParamVector,
    batch_c: &LabeledBatch,
) -> Result<Vec<ParamVector>> {
    let method = ctx.method;
    let loss_c = method.loss_c.ok_or(Error::NullConstraint("constraint"))?;
    let mut per = per_example_grads(
        ctx.model,
        theta,
        batch_c,
        loss_c,
        method.reference_theta.as_ref(),
    )?;
    if method.name == MethodName::Scrub && method.gamma != 0.0 {
        let ce = per_example_grads(ctx.model, theta, batch_c, LossKind::CrossEntropy, None)?;
        for (g, extra) in per.iter_mut().zip(&ce) {
            *g = g.add_scaled(extra, method.gamma)?;
        }
    }
    Ok(per)
}

/// One batch update of Algorithm-style unlearning. Returns the advanced
/// state plus a trace. `capture_agreement` additionally records the
/// agreement probabilities (used for the probability-histogram figure).
pub fn unlearn_step(
    ctx: &StepContext,
    state: UnlearnRunState,
    batch_u: &LabeledBatch,
    batch_c: Option<&LabeledBatch>,
    capture_agreement: bool,
) -> Result<(UnlearnRunState, StepTrace)> {
    let method = ctx.method;
    let addon = ctx.addon;
    addon.validate_for(method)?;

    let g_u = method.objective_grad(ctx.model, &state.theta_u, batch_u)?;
    if !g_u.is_finite() {
        return Err(Error::NonFinite {
            context: "objective gradient",
            detail: format!("epoch {}, batch {}", state.epoch, state.batch_index),
        });
    }
    let adam_u = state.adam_u.update(&g_u)?;

    let (g_c, adam_c) = if method.has_constraint() {
        let bc = batch_c.ok_or_else(|| {
            Error::InvalidArgument("method has a constraint but no constraint batch given".into())
        })?;
        let g = method.constraint_grad(ctx.model, &state.theta_u, bc)?;
        if !g.is_finite() {
            return Err(Error::NonFinite {
                context: "constraint gradient",
                detail: format!("epoch {}, batch {}", state.epoch, state.batch_index),
            });
        }
        let tracker = state
            .adam_c
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("missing constraint moment tracker".into()))?;
        let updated = tracker.update(&g)?;
        (Some(g), Some(updated))
    } else {
        (None, None)
    };

    let mut trace = StepTrace::default();
    if let Some(gc) = &g_c {
        trace.g_u_dot_g_c = Some(g_u.dot(gc)?);
    }

    // Base direction without masking: -Agg(g_u, g_c), or plain descent -g_u
    // for methods with a null constraint.
    let base_direction = |g_u: &ParamVector, g_c: Option<&ParamVector>| -> Result<ParamVector> {
        match g_c {
            Some(gc) => update_direction(
                &MaskOrFocus::all_ones(g_u.len()),
                &addon.agg,
                g_u,
                gc,
            ),
            None => Ok(g_u.scaled(-1.0)),
        }
    };

    let mut pair_for_capture: Option<GradientPair> = None;
    let direction = match addon.kind {
        AddOnKind::None => base_direction(&g_u, g_c.as_ref())?,
        AddOnKind::Salun => {
            let mask = state.salun_mask.as_ref().ok_or_else(|| {
                Error::InvalidArgument("salun add-on requires the run-start saliency mask".into())
            })?;
            let base = base_direction(&g_u, g_c.as_ref())?;
            if mask.weights.len() != base.len() {
                return Err(Error::DimensionMismatch {
                    context: "salun mask",
                    expected: base.len(),
                    actual: mask.weights.len(),
                });
            }
            ParamVector::from_vec(
                mask.weights
                    .iter()
                    .zip(base.iter())
                    .map(|(w, d)| w * d)
                    .collect(),
            )
        }
        AddOnKind::And => {
            let gc = g_c.as_ref().expect("validated constraint");
            let mask = mask_and(&g_u, gc)?;
            update_direction(&mask, &addon.agg, &g_u, gc)?
        }
        AddOnKind::Prob | AddOnKind::Bernoulli | AddOnKind::Focus => {
            let gc = g_c.as_ref().expect("validated constraint");
            let bc = batch_c.expect("validated constraint batch");
            let (sigma2_u, sigma2_c) = variance_pair(
                ctx,
                &state.theta_u,
                batch_u,
                bc,
                &adam_u,
                adam_c.as_ref().expect("validated constraint tracker"),
            )?;
            let pair = GradientPair::new(g_u.clone(), gc.clone(), sigma2_u, sigma2_c)?;
            let mask = match addon.kind {
                AddOnKind::Prob => mask_prob(&pair, addon.p.expect("validated p"), ctx.eps)?,
                AddOnKind::Bernoulli => mask_bernoulli(
                    &pair,
                    ctx.eps,
                    derive_seed(state.bernoulli_seed, state.step_counter),
                ),
                AddOnKind::Focus => focus_vector(&pair, ctx.eps),
                _ => unreachable!(),
            };
            let d = update_direction(&mask, &addon.agg, &g_u, gc)?;
            pair_for_capture = Some(pair);
            d
        }
    };

    if capture_agreement && method.has_constraint() {
        let pair = match pair_for_capture {
            Some(p) => p,
            None => {
                let gc = g_c.as_ref().expect("constraint gradient");
                let bc = batch_c.expect("constraint batch");
                let (s_u, s_c) = variance_pair(
                    ctx,
                    &state.theta_u,
                    batch_u,
                    bc,
                    &adam_u,
                    adam_c.as_ref().expect("constraint tracker"),
                )?;
                GradientPair::new(g_u.clone(), gc.clone(), s_u, s_c)?
            }
        };
        trace.agree_weights = Some(agree_prob(&pair, ctx.eps));
    }

    let theta_u = sgd_step(&state.theta_u, &direction, ctx.eta)?;
    if !theta_u.is_finite() {
        return Err(Error::NonFinite {
            context: "updated parameters",
            detail: format!(
                "divergence at epoch {}, batch {}",
                state.epoch, state.batch_index
            ),
        });
    }

    Ok((
        UnlearnRunState {
            theta_u,
            adam_u,
            adam_c,
            epoch: state.epoch,
            batch_index: state.batch_index + 1,
            step_counter: state.step_counter + 1,
            bernoulli_seed: state.bernoulli_seed,
            salun_mask: state.salun_mask,
            rte_seconds: state.rte_seconds,
        },
        trace,
    ))
}

/// SalUn saliency mask from the gradient-ascent direction over the full
/// forget set, computed once at run start.
pub fn salun_mask_for_run(
    model: &ModelSpec,
    theta0: &ParamVector,
    forget: &LabeledBatch,
) -> Result<MaskOrFocus> {
    let ascent = grad(model, theta0, forget, LossKind::NegativeCrossEntropy, None)?;
    mask_salun(&ascent)
}

/// SRL's working dataset: the training set with forget labels randomized
/// (strictly: never the original label), fixed for the whole run.
pub fn build_relabeled_train(
    split: &DatasetSplit,
    num_classes: usize,
    seed: u64,
) -> Result<LabeledBatch> {
    let relabeled_forget = randomize_labels(&split.forget, num_classes, seed)?;
    let mut labels = split.train.labels.clone();
    for (k, &i) in split.forget_indices.iter().enumerate() {
        labels[i] = relabeled_forget.labels[k];
    }
    LabeledBatch::new(split.train.inputs.clone(), labels)
}

// Endless batch supply: reshuffles with a fresh derived seed every time the
// epoch's batches run out.
struct BatchCycler<'a> {
    source: &'a LabeledBatch,
    batch_size: usize,
    base_seed: u64,
    refills: u64,
    queue: VecDeque<LabeledBatch>,
}

impl<'a> BatchCycler<'a> {
    fn new(source: &'a LabeledBatch, batch_size: usize, base_seed: u64) -> Self {
        Self {
            source,
            batch_size,
            base_seed,
            refills: 0,
            queue: VecDeque::new(),
        }
    }

    fn next_batch(&mut self) -> LabeledBatch {
        if self.queue.is_empty() {
            let seed = derive_seed(self.base_seed, self.refills);
            self.refills += 1;
            self.queue = batches(self.source, self.batch_size, seed).into();
        }
        self.queue.pop_front().expect("refilled queue")
    }
}

/// Hyperparameters of one unlearning run.
#[derive(Debug, Clone, Copy)]
pub struct UnlearnRunParams {
    pub epochs: usize,
    pub eta: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub seed: u64,
}

/// Result of a run: final parameters, per-epoch metrics, observability data.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub theta_final: ParamVector,
    pub reports: Vec<MetricsReport>,
    /// Agreement probabilities captured at the first batch of the middle
    /// epoch (methods with a constraint only).
    pub agree_snapshot: Option<Vec<f64>>,
    /// Per-step inner products of the two empirical gradients.
    pub inner_products: Vec<f64>,
}

fn resolve_role<'a>(
    role: DataRole,
    split: &'a DatasetSplit,
    relabeled: &'a Option<LabeledBatch>,
) -> Result<&'a LabeledBatch> {
    match role {
        DataRole::Retain => Ok(&split.retain),
        DataRole::Forget => Ok(&split.forget),
        DataRole::RelabeledTrain => relabeled
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("relabeled dataset was not built".into())),
    }
}

/// Full epoch/batch unlearning loop with per-epoch metric reports.
///
/// Deterministic per (config, seed); the only nondeterministic output is the
/// wall-clock `rte_seconds` column of the reports.
pub fn run_unlearning(
    model: &ModelSpec,
    theta0: &ParamVector,
    theta_ideal: &ParamVector,
    method: &UnlearnMethodSpec,
    addon: &AddOnSpec,
    split: &DatasetSplit,
    params: &UnlearnRunParams,
) -> Result<RunOutcome> {
    if params.epochs == 0 {
        return Err(Error::InvalidArgument("epochs must be at least 1".into()));
    }
    if params.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
    }
    addon.validate_for(method)?;

    let relabeled = if method.dataset_u == DataRole::RelabeledTrain
        || method.dataset_c == Some(DataRole::RelabeledTrain)
    {
        Some(build_relabeled_train(
            split,
            model.num_classes,
            derive_seed(params.seed, streams::RELABEL),
        )?)
    } else {
        None
    };
    let d_u = resolve_role(method.dataset_u, split, &relabeled)?;
    let d_c = match method.dataset_c {
        Some(role) => Some(resolve_role(role, split, &relabeled)?),
        None => None,
    };

    let mut state = UnlearnRunState::new(
        theta0.clone(),
        method.has_constraint(),
        derive_seed(params.seed, streams::BERNOULLI),
    );
    if addon.kind == AddOnKind::Salun {
        // The extra full forget-set gradient is part of the unlearning cost.
        let timer = Instant::now();
        state.salun_mask = Some(salun_mask_for_run(model, theta0, &split.forget)?);
        state.rte_seconds += timer.elapsed().as_secs_f64();
    }

    let ctx = StepContext {
        model,
        method,
        addon,
        eta: params.eta,
        eps: params.eps,
    };

    let mut cycler = d_c.map(|d| {
        BatchCycler::new(d, params.batch_size, derive_seed(params.seed, streams::BATCH_C))
    });

    let capture_epoch = params.epochs / 2;
    let mut agree_snapshot = None;
    let mut inner_products = Vec::new();
    let mut reports = Vec::with_capacity(params.epochs);

    for epoch in 0..params.epochs {
        state.epoch = epoch;
        state.batch_index = 0;
        let epoch_seed = derive_seed(derive_seed(params.seed, streams::BATCH_U), epoch as u64);
        let u_batches = batches(d_u, params.batch_size, epoch_seed);

        let timer = Instant::now();
        for (bi, batch_u) in u_batches.iter().enumerate() {
            let batch_c = cycler.as_mut().map(|c| c.next_batch());
            let capture = epoch == capture_epoch && bi == 0 && agree_snapshot.is_none();
            let (next, trace) = unlearn_step(&ctx, state, batch_u, batch_c.as_ref(), capture)?;
            state = next;
            if let Some(ip) = trace.g_u_dot_g_c {
                inner_products.push(ip);
            }
            if let Some(w) = trace.agree_weights {
                agree_snapshot = Some(w);
            }
        }
        state.rte_seconds += timer.elapsed().as_secs_f64();

        reports.push(report(
            model,
            &state.theta_u,
            theta_ideal,
            split,
            epoch + 1,
            state.rte_seconds,
            derive_seed(derive_seed(params.seed, streams::MIA), epoch as u64),
        )?);
    }

    Ok(RunOutcome {
        theta_final: state.theta_u,
        reports,
        agree_snapshot,
        inner_products,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_gaussian_blobs, split_forget, Scenario, ScenarioConfig};
    use crate::nn::{init_params, Activation};

    fn setup() -> (ModelSpec, ParamVector, DatasetSplit) {
        let model = ModelSpec::new(4, vec![6], 3, Activation::Tanh).unwrap();
        let theta = init_params(&model, 3);
        let (train, test) = make_gaussian_blobs(3, 20, 10, 4, 2.0, 5).unwrap();
        let cfg = ScenarioConfig {
            scenario: Scenario::RandomFraction,
            fraction: 0.25,
            target_class: None,
            seed: 6,
        };
        let split = split_forget(&train, &test, &cfg).unwrap();
        (model, theta, split)
    }

    fn addon_none() -> AddOnSpec {
        AddOnSpec::new(AddOnKind::None, None, AggSpec::linear(1.0, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn registry_matches_method_definitions() {
        let ft = UnlearnMethodSpec::for_method(MethodName::Ft, 0.0, None).unwrap();
        assert_eq!(ft.loss_u, LossKind::CrossEntropy);
        assert_eq!(ft.dataset_u, DataRole::Retain);
        assert!(!ft.has_constraint());

        let ga = UnlearnMethodSpec::for_method(MethodName::Ga, 0.0, None).unwrap();
        assert_eq!(ga.loss_u, LossKind::NegativeCrossEntropy);
        assert_eq!(ga.dataset_u, DataRole::Forget);
        assert!(!ga.has_constraint());

        let ng = UnlearnMethodSpec::for_method(MethodName::NgPlus, 0.0, None).unwrap();
        assert_eq!(ng.loss_c, Some(LossKind::CrossEntropy));
        assert_eq!(ng.dataset_c, Some(DataRole::Retain));

        let srl = UnlearnMethodSpec::for_method(MethodName::Srl, 0.0, None).unwrap();
        assert_eq!(srl.dataset_u, DataRole::RelabeledTrain);

        let l1 = UnlearnMethodSpec::for_method(MethodName::L1Sparse, 0.0, None).unwrap();
        assert_eq!(l1.loss_u, LossKind::L1ParamNorm);

        assert!(UnlearnMethodSpec::for_method(MethodName::Scrub, 1.0, None).is_err());
        let scrub =
            UnlearnMethodSpec::for_method(MethodName::Scrub, 1.0, Some(ParamVector::zeros(4)))
                .unwrap();
        assert_eq!(scrub.loss_u, LossKind::NegativeKlToReference);
    }

    #[test]
    fn constraint_value_is_zero_at_theta0() {
        let (model, theta, split) = setup();
        let method = UnlearnMethodSpec::for_method(MethodName::NgPlus, 0.0, None).unwrap();
        let c = constraint_value(&method, &model, &theta, &theta, &split.retain).unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn constraint_value_sign_tracks_loss() {
        let (model, theta, split) = setup();
        let method = UnlearnMethodSpec::for_method(MethodName::NgPlus, 0.0, None).unwrap();
        // One descent step on the retain loss strictly lowers it here.
        let g = grad(&model, &theta, &split.retain, LossKind::CrossEntropy, None).unwrap();
        let better = sgd_step(&theta, &g.scaled(-1.0), 0.05).unwrap();
        let c = constraint_value(&method, &model, &better, &theta, &split.retain).unwrap();
        assert!(c < 0.0, "constraint value {c}");
        // Oracle: plain difference of two loss evaluations.
        let direct = method
            .constraint_loss(&model, &better, &split.retain)
            .unwrap()
            - method.constraint_loss(&model, &theta, &split.retain).unwrap();
        assert!((c - direct).abs() < 1e-15);
    }

    #[test]
    fn constraint_value_rejected_for_null_constraint() {
        let (model, theta, split) = setup();
        let ft = UnlearnMethodSpec::for_method(MethodName::Ft, 0.0, None).unwrap();
        assert!(matches!(
            constraint_value(&ft, &model, &theta, &theta, &split.retain),
            Err(Error::NullConstraint(_))
        ));
    }

    #[test]
    fn scrub_losses_vanish_at_reference() {
        let (model, theta, split) = setup();
        let scrub =
            UnlearnMethodSpec::for_method(MethodName::Scrub, 1.0, Some(theta.clone())).unwrap();
        let lu = scrub.objective_loss(&model, &theta, &split.forget).unwrap();
        assert!(lu.abs() < 1e-12, "self-KL objective {lu}");
        // Constraint minus the gamma*CE part is the self-KL, also zero.
        let lc = scrub.constraint_loss(&model, &theta, &split.retain).unwrap();
        let ce = loss_value(&model, &theta, &split.retain, LossKind::CrossEntropy, None).unwrap();
        assert!((lc - ce).abs() < 1e-12);
    }

    #[test]
    fn addon_compatibility_enforced_at_config_time() {
        let ga = UnlearnMethodSpec::for_method(MethodName::Ga, 0.0, None).unwrap();
        let focus =
            AddOnSpec::new(AddOnKind::Focus, None, AggSpec::linear(1.0, 1.0).unwrap()).unwrap();
        assert!(matches!(
            focus.validate_for(&ga),
            Err(Error::IncompatibleAddOn { .. })
        ));
        let salun =
            AddOnSpec::new(AddOnKind::Salun, None, AggSpec::linear(1.0, 1.0).unwrap()).unwrap();
        assert!(salun.validate_for(&ga).is_ok());

        assert!(AddOnSpec::new(AddOnKind::Prob, None, AggSpec::abs_min()).is_err());
        assert!(AddOnSpec::new(AddOnKind::Focus, Some(0.3), AggSpec::abs_min()).is_err());
        assert!(AddOnSpec::new(AddOnKind::Prob, Some(1.5), AggSpec::abs_min()).is_err());
    }

    #[test]
    fn ft_step_with_identity_agg_is_plain_sgd() {
        let (model, theta, split) = setup();
        let ft = UnlearnMethodSpec::for_method(MethodName::Ft, 0.0, None).unwrap();
        let addon = AddOnSpec::new(AddOnKind::None, None, AggSpec::linear(1.0, 0.0).unwrap())
            .unwrap();
        let ctx = StepContext {
            model: &model,
            method: &ft,
            addon: &addon,
            eta: 0.1,
            eps: 1e-8,
        };
        let state = UnlearnRunState::new(theta.clone(), false, 0);
        let (next, trace) = unlearn_step(&ctx, state, &split.retain, None, false).unwrap();
        assert!(trace.g_u_dot_g_c.is_none());
        let g = grad(&model, &theta, &split.retain, LossKind::CrossEntropy, None).unwrap();
        let expected = sgd_step(&theta, &g.scaled(-1.0), 0.1).unwrap();
        assert_eq!(next.theta_u, expected);
    }

    #[test]
    fn ga_step_is_gradient_ascent_on_forget() {
        let (model, theta, split) = setup();
        let ga = UnlearnMethodSpec::for_method(MethodName::Ga, 0.0, None).unwrap();
        let addon = addon_none();
        let ctx = StepContext {
            model: &model,
            method: &ga,
            addon: &addon,
            eta: 0.05,
            eps: 1e-8,
        };
        let state = UnlearnRunState::new(theta.clone(), false, 0);
        let (next, _) = unlearn_step(&ctx, state, &split.forget, None, false).unwrap();
        let ce_grad = grad(&model, &theta, &split.forget, LossKind::CrossEntropy, None).unwrap();
        let expected = sgd_step(&theta, &ce_grad, 0.05).unwrap();
        assert_eq!(next.theta_u, expected);
    }

    #[test]
    fn ngplus_step_composes_linear_agg() {
        let (model, theta, split) = setup();
        let ng = UnlearnMethodSpec::for_method(MethodName::NgPlus, 0.0, None).unwrap();
        let addon = AddOnSpec::new(AddOnKind::None, None, AggSpec::linear(0.05, 0.95).unwrap())
            .unwrap();
        let ctx = StepContext {
            model: &model,
            method: &ng,
            addon: &addon,
            eta: 0.01,
            eps: 1e-8,
        };
        let state = UnlearnRunState::new(theta.clone(), true, 0);
        let (next, trace) =
            unlearn_step(&ctx, state, &split.forget, Some(&split.retain), false).unwrap();
        let g_u = grad(
            &model,
            &theta,
            &split.forget,
            LossKind::NegativeCrossEntropy,
            None,
        )
        .unwrap();
        let g_c = grad(&model, &theta, &split.retain, LossKind::CrossEntropy, None).unwrap();
        assert!((trace.g_u_dot_g_c.unwrap() - g_u.dot(&g_c).unwrap()).abs() < 1e-15);
        let direction = g_u.scaled(-0.05).add_scaled(&g_c, -0.95).unwrap();
        let expected = sgd_step(&theta, &direction, 0.01).unwrap();
        for (a, b) in next.theta_u.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn and_step_with_opposed_gradients_freezes_parameters() {
        // batch_c = batch_u = forget under NGPlus gives g_c = -g_u, so every
        // sign product is <= 0 and the AND mask zeroes the whole step.
        let (model, theta, split) = setup();
        let ng = UnlearnMethodSpec::for_method(MethodName::NgPlus, 0.0, None).unwrap();
        let addon = AddOnSpec::new(AddOnKind::And, None, AggSpec::linear(0.5, 0.5).unwrap())
            .unwrap();
        let ctx = StepContext {
            model: &model,
            method: &ng,
            addon: &addon,
            eta: 0.01,
            eps: 1e-8,
        };
        let state = UnlearnRunState::new(theta.clone(), true, 0);
        let (next, _) =
            unlearn_step(&ctx, state, &split.forget, Some(&split.forget), false).unwrap();
        assert_eq!(next.theta_u, theta);
    }

    #[test]
    fn and_step_with_identical_gradients_applies_full_aggregation() {
        // SRL on an already-relabeled split where D_U and D_C see the same
        // batch produces g_u == g_c, a full mask, and direction -Agg(g, g).
        let (model, theta, split) = setup();
        let srl = UnlearnMethodSpec::for_method(MethodName::Srl, 0.0, None).unwrap();
        let addon = AddOnSpec::new(AddOnKind::And, None, AggSpec::linear(0.5, 0.5).unwrap())
            .unwrap();
        let ctx = StepContext {
            model: &model,
            method: &srl,
            addon: &addon,
            eta: 0.01,
            eps: 1e-8,
        };
        // Both losses are cross-entropy; feed the same retain batch to both.
        let state = UnlearnRunState::new(theta.clone(), true, 0);
        let (next, _) =
            unlearn_step(&ctx, state, &split.retain, Some(&split.retain), false).unwrap();
        let g = grad(&model, &theta, &split.retain, LossKind::CrossEntropy, None).unwrap();
        let expected = sgd_step(&theta, &g.scaled(-1.0), 0.01).unwrap();
        for (a, b) in next.theta_u.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn focus_with_huge_variance_halves_the_none_step() {
        let (model, theta, split) = setup();
        let ng = UnlearnMethodSpec::for_method(MethodName::NgPlus, 0.0, None).unwrap();
        let agg = AggSpec::linear(0.05, 0.95).unwrap();
        let focus = AddOnSpec::new(AddOnKind::Focus, None, agg).unwrap();
        let plain = AddOnSpec::new(AddOnKind::None, None, agg).unwrap();

        // Pre-feed the moment trackers with alternating huge gradients so the
        // Adam variance estimate dwarfs any real gradient component.
        let n = theta.len();
        let mut state = UnlearnRunState::new(theta.clone(), true, 0);
        for t in 0..20 {
            let sign = if t % 2 == 0 { 1.0 } else { -1.0 };
            let huge = ParamVector::from_vec(vec![sign * 1e12; n]);
            state.adam_u = state.adam_u.update(&huge).unwrap();
            state.adam_c = Some(state.adam_c.unwrap().update(&huge).unwrap());
        }

        let eta = 0.01;
        let ctx_focus = StepContext {
            model: &model,
            method: &ng,
            addon: &focus,
            eta,
            eps: 1e-8,
        };
        let ctx_plain = StepContext {
            model: &model,
            method: &ng,
            addon: &plain,
            eta,
            eps: 1e-8,
        };
        let (after_focus, _) = unlearn_step(
            &ctx_focus,
            state.clone(),
            &split.forget,
            Some(&split.retain),
            false,
        )
        .unwrap();
        let (after_plain, _) = unlearn_step(
            &ctx_plain,
            state,
            &split.forget,
            Some(&split.retain),
            false,
        )
        .unwrap();
        for ((f, p), t) in after_focus
            .theta_u
            .iter()
            .zip(after_plain.theta_u.iter())
            .zip(theta.iter())
        {
            let step_focus = f - t;
            let step_plain = p - t;
            assert!(
                (step_focus - 0.5 * step_plain).abs() < 1e-6,
                "focus {step_focus} vs half of {step_plain}"
            );
        }
    }

    #[test]
    fn per_example_provider_tolerates_singleton_batches() {
        let (model, theta, split) = setup();
        let ng = UnlearnMethodSpec::for_method(MethodName::NgPlus, 0.0, None).unwrap();
        let addon = AddOnSpec::new(AddOnKind::Focus, None, AggSpec::linear(0.5, 0.5).unwrap())
            .unwrap()
            .with_provider(VarianceProvider::PerExample);
        let ctx = StepContext {
            model: &model,
            method: &ng,
            addon: &addon,
            eta: 1e-4,
            eps: 1e-8,
        };
        let one_u = split.forget.select(&[0]);
        let one_c = split.retain.select(&[0]);
        let state = UnlearnRunState::new(theta, true, 0);
        assert!(unlearn_step(&ctx, state, &one_u, Some(&one_c), false).is_ok());
    }

    #[test]
    fn relabeled_train_keeps_retain_labels() {
        let (model, _, split) = setup();
        let relabeled = build_relabeled_train(&split, model.num_classes, 42).unwrap();
        assert_eq!(relabeled.inputs, split.train.inputs);
        for &i in &split.retain_indices {
            assert_eq!(relabeled.labels[i], split.train.labels[i]);
        }
        for &i in &split.forget_indices {
            assert_ne!(relabeled.labels[i], split.train.labels[i]);
        }
    }

    #[test]
    fn run_rejects_zero_epochs() {
        let (model, theta, split) = setup();
        let ft = UnlearnMethodSpec::for_method(MethodName::Ft, 0.0, None).unwrap();
        let params = UnlearnRunParams {
            epochs: 0,
            eta: 0.01,
            eps: 1e-8,
            batch_size: 8,
            seed: 1,
        };
        assert!(run_unlearning(&model, &theta, &theta, &ft, &addon_none(), &split, &params)
            .is_err());
    }

    #[test]
    fn run_is_deterministic_per_seed() {
        let (model, theta, split) = setup();
        let srl = UnlearnMethodSpec::for_method(MethodName::Srl, 0.0, None).unwrap();
        let addon = AddOnSpec::new(AddOnKind::Focus, None, AggSpec::linear(0.05, 0.95).unwrap())
            .unwrap();
        let params = UnlearnRunParams {
            epochs: 2,
            eta: 0.01,
            eps: 1e-8,
            batch_size: 8,
            seed: 9,
        };
        let a = run_unlearning(&model, &theta, &theta, &srl, &addon, &split, &params).unwrap();
        let b = run_unlearning(&model, &theta, &theta, &srl, &addon, &split, &params).unwrap();
        assert_eq!(a.theta_final, b.theta_final);
        assert_eq!(a.inner_products, b.inner_products);
        assert_eq!(a.agree_snapshot, b.agree_snapshot);
        // Everything except wall-clock timing matches.
        for (ra, rb) in a.reports.iter().zip(&b.reports) {
            assert_eq!(ra.ua, rb.ua);
            assert_eq!(ra.rua, rb.rua);
            assert_eq!(ra.mia, rb.mia);
        }
        let c = run_unlearning(
            &model,
            &theta,
            &theta,
            &srl,
            &addon,
            &split,
            &UnlearnRunParams { seed: 10, ..params },
        )
        .unwrap();
        assert_ne!(a.theta_final, c.theta_final);
    }

    #[test]
    fn run_produces_snapshot_and_reports() {
        let (model, theta, split) = setup();
        let ng = UnlearnMethodSpec::for_method(MethodName::NgPlus, 0.0, None).unwrap();
        let addon = addon_none();
        let params = UnlearnRunParams {
            epochs: 3,
            eta: 0.005,
            eps: 1e-8,
            batch_size: 8,
            seed: 2,
        };
        let out = run_unlearning(&model, &theta, &theta, &ng, &addon, &split, &params).unwrap();
        assert_eq!(out.reports.len(), 3);
        assert_eq!(out.reports[0].epoch, 1);
        let snap = out.agree_snapshot.unwrap();
        assert_eq!(snap.len(), theta.len());
        assert!(snap.iter().all(|&w| (0.0..=1.0).contains(&w)));
        assert!(!out.inner_products.is_empty());
        // RTE accumulates monotonically.
        for w in out.reports.windows(2) {
            assert!(w[1].rte_seconds >= w[0].rte_seconds);
        }
    }

    #[test]
    fn stationary_ft_barely_moves() {
        // Train FT to a near-minimum first, then one more epoch with tiny eta
        // changes theta by less than 1e-8 in norm.
        let (model, theta, split) = setup();
        let ft = UnlearnMethodSpec::for_method(MethodName::Ft, 0.0, None).unwrap();
        let addon = AddOnSpec::new(AddOnKind::None, None, AggSpec::linear(1.0, 0.0).unwrap())
            .unwrap();
        let mut current = theta;
        for _ in 0..2000 {
            let g = grad(&model, &current, &split.retain, LossKind::CrossEntropy, None).unwrap();
            current = sgd_step(&current, &g.scaled(-1.0), 0.2).unwrap();
        }
        let params = UnlearnRunParams {
            epochs: 1,
            eta: 1e-12,
            eps: 1e-8,
            batch_size: split.retain.len(),
            seed: 4,
        };
        let out =
            run_unlearning(&model, &current, &current, &ft, &addon, &split, &params).unwrap();
        let delta = out.theta_final.add_scaled(&current, -1.0).unwrap();
        assert!(delta.norm_q(2.0) < 1e-8, "moved {}", delta.norm_q(2.0));
    }
}
