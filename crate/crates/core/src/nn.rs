//! Minimal fully connected classifier with exact analytic gradients.
//!
//! Parameters live in a single flat [`ParamVector`]. The flattening order is
//! fixed: layer-major, weights before biases, row-major within a weight
//! matrix (`W[out][in]`). Masks and update directions computed against this
//! layout are therefore reproducible across runs.
//!
//! Networks are small on purpose: full-batch true gradients must be cheap,
//! because several property suites compare batch updates against them.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::params::{mean_vector, ParamVector};

/// Hidden-layer nonlinearity. The output layer is always linear (logits).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    // Derivative as a function of the pre-activation; relu'(0) = 0.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Activation::Relu => write!(f, "relu"),
            Activation::Tanh => write!(f, "tanh"),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::InvalidArgument(format!(
                "unknown activation `{other}` (expected relu|tanh)"
            ))),
        }
    }
}

/// Architecture of a fully connected classifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    pub activation: Activation,
}

impl ModelSpec {
    pub fn new(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        num_classes: usize,
        activation: Activation,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_dims.contains(&0) {
            return Err(Error::InvalidArgument(
                "all layer dimensions must be positive".into(),
            ));
        }
        if num_classes < 2 {
            return Err(Error::InvalidArgument(
                "num_classes must be at least 2".into(),
            ));
        }
        Ok(Self {
            input_dim,
            hidden_dims,
            num_classes,
            activation,
        })
    }

    /// (in_dim, out_dim) of each layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.num_classes));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| o * i + o).sum()
    }

    pub fn layout(&self) -> Layout {
        let mut entries = Vec::new();
        let mut offset = 0;
        for (layer, (in_dim, out_dim)) in self.layer_dims().into_iter().enumerate() {
            entries.push(LayoutEntry {
                layer,
                kind: ParamBlock::Weight {
                    rows: out_dim,
                    cols: in_dim,
                },
                offset,
            });
            offset += out_dim * in_dim;
            entries.push(LayoutEntry {
                layer,
                kind: ParamBlock::Bias { len: out_dim },
                offset,
            });
            offset += out_dim;
        }
        Layout {
            entries,
            total: offset,
        }
    }

    fn check_theta(&self, theta: &ParamVector) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                context: "parameter vector vs model spec",
                expected: self.param_count(),
                actual: theta.len(),
            });
        }
        Ok(())
    }

    fn check_inputs(&self, inputs: &Matrix) -> Result<()> {
        if inputs.cols() != self.input_dim {
            return Err(Error::DimensionMismatch {
                context: "input width vs model spec",
                expected: self.input_dim,
                actual: inputs.cols(),
            });
        }
        Ok(())
    }
}

/// One contiguous block of the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamBlock {
    Weight { rows: usize, cols: usize },
    Bias { len: usize },
}

#[allow(clippy::len_without_is_empty)]
impl ParamBlock {
    pub fn len(&self) -> usize {
        match *self {
            ParamBlock::Weight { rows, cols } => rows * cols,
            ParamBlock::Bias { len } => len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutEntry {
    pub layer: usize,
    pub kind: ParamBlock,
    pub offset: usize,
}

/// Flattening table: where each layer's weight matrix and bias live in the
/// flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub entries: Vec<LayoutEntry>,
    pub total: usize,
}

impl Layout {
    /// Split a flat vector into per-block slices (weights/biases in order).
    pub fn blocks<'a>(&self, theta: &'a ParamVector) -> Vec<&'a [f64]> {
        self.entries
            .iter()
            .map(|e| &theta.as_slice()[e.offset..e.offset + e.kind.len()])
            .collect()
    }

    /// Reassemble a flat vector from per-block slices. Inverse of [`Self::blocks`].
    pub fn flatten(&self, blocks: &[Vec<f64>]) -> Result<ParamVector> {
        if blocks.len() != self.entries.len() {
            return Err(Error::DimensionMismatch {
                context: "layout blocks",
                expected: self.entries.len(),
                actual: blocks.len(),
            });
        }
        let mut values = Vec::with_capacity(self.total);
        for (entry, block) in self.entries.iter().zip(blocks) {
            if block.len() != entry.kind.len() {
                return Err(Error::DimensionMismatch {
                    context: "layout block length",
                    expected: entry.kind.len(),
                    actual: block.len(),
                });
            }
            values.extend_from_slice(block);
        }
        Ok(ParamVector::from_vec(values))
    }

    pub fn unflatten(&self, theta: &ParamVector) -> Result<Vec<Vec<f64>>> {
        if theta.len() != self.total {
            return Err(Error::DimensionMismatch {
                context: "layout total",
                expected: self.total,
                actual: theta.len(),
            });
        }
        Ok(self.blocks(theta).into_iter().map(|s| s.to_vec()).collect())
    }
}

/// A batch of labeled examples.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
}

impl LabeledBatch {
    pub fn new(inputs: Matrix, labels: Vec<usize>) -> Result<Self> {
        if inputs.rows() == 0 {
            return Err(Error::Empty("batch"));
        }
        if inputs.rows() != labels.len() {
            return Err(Error::DimensionMismatch {
                context: "batch labels vs inputs",
                expected: inputs.rows(),
                actual: labels.len(),
            });
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Sub-batch at the given example indices (indices may repeat).
    pub fn select(&self, indices: &[usize]) -> LabeledBatch {
        LabeledBatch {
            inputs: self.inputs.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Concatenate two batches with the same feature width.
    pub fn concat(&self, other: &LabeledBatch) -> Result<LabeledBatch> {
        if self.inputs.cols() != other.inputs.cols() {
            return Err(Error::DimensionMismatch {
                context: "batch concat widths",
                expected: self.inputs.cols(),
                actual: other.inputs.cols(),
            });
        }
        let mut data = self.inputs.data().to_vec();
        data.extend_from_slice(other.inputs.data());
        let inputs = Matrix::from_vec(self.len() + other.len(), self.inputs.cols(), data)?;
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        LabeledBatch::new(inputs, labels)
    }
}

/// Loss functions whose gradients the network computes analytically.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    NegativeCrossEntropy,
    /// KL(softmax(reference) ‖ softmax(current)), mean over the batch.
    KlToReference,
    NegativeKlToReference,
    /// ℓ1 norm of the parameter vector itself; data-independent.
    L1ParamNorm,
}

impl LossKind {
    pub fn needs_reference(self) -> bool {
        matches!(self, LossKind::KlToReference | LossKind::NegativeKlToReference)
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::NegativeCrossEntropy => "negative_cross_entropy",
            LossKind::KlToReference => "kl_to_reference",
            LossKind::NegativeKlToReference => "negative_kl_to_reference",
            LossKind::L1ParamNorm => "l1_param_norm",
        };
        write!(f, "{s}")
    }
}

// Per-layer views into the flat vector: (weight slice, bias slice) per layer.
fn layer_views<'a>(spec: &ModelSpec, theta: &'a [f64]) -> Vec<(&'a [f64], &'a [f64])> {
    let mut views = Vec::new();
    let mut off = 0;
    for (in_dim, out_dim) in spec.layer_dims() {
        let w = &theta[off..off + out_dim * in_dim];
        off += out_dim * in_dim;
        let b = &theta[off..off + out_dim];
        off += out_dim;
        views.push((w, b));
    }
    views
}

/// Forward pass: logits for every row of `inputs`. Deterministic.
pub fn forward(spec: &ModelSpec, theta: &ParamVector, inputs: &Matrix) -> Result<Matrix> {
    spec.check_theta(theta)?;
    spec.check_inputs(inputs)?;
    let views = layer_views(spec, theta.as_slice());
    let num_layers = views.len();
    let mut out = Matrix::zeros(inputs.rows(), spec.num_classes);
    let mut buf_in: Vec<f64> = Vec::new();
    let mut buf_out: Vec<f64> = Vec::new();
    for r in 0..inputs.rows() {
        buf_in.clear();
        buf_in.extend_from_slice(inputs.row(r));
        for (l, (w, b)) in views.iter().enumerate() {
            let in_dim = buf_in.len();
            let out_dim = b.len();
            buf_out.clear();
            buf_out.resize(out_dim, 0.0);
            for o in 0..out_dim {
                let row = &w[o * in_dim..(o + 1) * in_dim];
                let mut z = b[o];
                for (wi, xi) in row.iter().zip(&buf_in) {
                    z += wi * xi;
                }
                buf_out[o] = if l + 1 < num_layers {
                    spec.activation.apply(z)
                } else {
                    z
                };
            }
            std::mem::swap(&mut buf_in, &mut buf_out);
        }
        out.row_mut(r).copy_from_slice(&buf_in);
    }
    Ok(out)
}

/// Numerically stable log-softmax of one logit row.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|&v| v - lse).collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    log_softmax(row).iter().map(|&l| l.exp()).collect()
}

fn check_labels(logits: &Matrix, labels: &[usize]) -> Result<()> {
    if logits.rows() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "labels vs logits",
            expected: logits.rows(),
            actual: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= logits.cols()) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {} classes",
            logits.cols()
        )));
    }
    Ok(())
}

/// Mean cross-entropy `-log softmax(logits)[label]` over the batch.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels(logits, labels)?;
    if logits.rows() == 0 {
        return Err(Error::Empty("batch"));
    }
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        total -= log_softmax(logits.row(r))[y];
    }
    Ok(total / logits.rows() as f64)
}

/// Mean KL(softmax(ref) ‖ softmax(cur)) over the batch.
pub fn kl_divergence(logits_ref: &Matrix, logits_cur: &Matrix) -> Result<f64> {
    if logits_ref.rows() != logits_cur.rows() || logits_ref.cols() != logits_cur.cols() {
        return Err(Error::DimensionMismatch {
            context: "kl_divergence shapes",
            expected: logits_ref.rows() * logits_ref.cols(),
            actual: logits_cur.rows() * logits_cur.cols(),
        });
    }
    if logits_ref.rows() == 0 {
        return Err(Error::Empty("batch"));
    }
    let mut total = 0.0;
    for r in 0..logits_ref.rows() {
        let ls_p = log_softmax(logits_ref.row(r));
        let ls_q = log_softmax(logits_cur.row(r));
        for (lp, lq) in ls_p.iter().zip(&ls_q) {
            let p = lp.exp();
            if p > 0.0 {
                total += p * (lp - lq);
            }
        }
    }
    Ok(total / logits_ref.rows() as f64)
}

/// Loss value matching [`grad`] for the given kind.
pub fn loss_value(
    spec: &ModelSpec,
    theta: &ParamVector,
    batch: &LabeledBatch,
    kind: LossKind,
    reference: Option<&ParamVector>,
) -> Result<f64> {
    match kind {
        LossKind::CrossEntropy | LossKind::NegativeCrossEntropy => {
            let logits = forward(spec, theta, &batch.inputs)?;
            let ce = cross_entropy(&logits, &batch.labels)?;
            Ok(if kind == LossKind::CrossEntropy { ce } else { -ce })
        }
        LossKind::KlToReference | LossKind::NegativeKlToReference => {
            let reference = reference.ok_or(Error::MissingReference("kl_to_reference"))?;
            let logits_ref = forward(spec, reference, &batch.inputs)?;
            let logits_cur = forward(spec, theta, &batch.inputs)?;
            let kl = kl_divergence(&logits_ref, &logits_cur)?;
            Ok(if kind == LossKind::KlToReference { kl } else { -kl })
        }
        LossKind::L1ParamNorm => Ok(theta.norm_q(1.0)),
    }
}

// Backprop for a single example. `dlogits` is dLoss/dlogits for that example.
// Gradient blocks are written into `grad` (same layout as theta).
fn backprop_example(
    spec: &ModelSpec,
    theta: &[f64],
    input: &[f64],
    dlogits: &[f64],
    grad: &mut [f64],
) {
    let views = layer_views(spec, theta);
    let num_layers = views.len();

    // Forward, caching pre-activations and activations per layer.
    let mut activations: Vec<Vec<f64>> = Vec::with_capacity(num_layers + 1);
    let mut pre_acts: Vec<Vec<f64>> = Vec::with_capacity(num_layers);
    activations.push(input.to_vec());
    for (l, (w, b)) in views.iter().enumerate() {
        let a_prev = &activations[l];
        let in_dim = a_prev.len();
        let out_dim = b.len();
        let mut z = vec![0.0; out_dim];
        for o in 0..out_dim {
            let row = &w[o * in_dim..(o + 1) * in_dim];
            let mut acc = b[o];
            for (wi, xi) in row.iter().zip(a_prev) {
                acc += wi * xi;
            }
            z[o] = acc;
        }
        let a = if l + 1 < num_layers {
            z.iter().map(|&v| spec.activation.apply(v)).collect()
        } else {
            z.clone()
        };
        pre_acts.push(z);
        activations.push(a);
    }

    // Backward.
    let mut delta = dlogits.to_vec();
    let mut offsets = Vec::with_capacity(num_layers);
    {
        let mut off = 0;
        for (in_dim, out_dim) in spec.layer_dims() {
            offsets.push(off);
            off += out_dim * in_dim + out_dim;
        }
    }
    for l in (0..num_layers).rev() {
        let (w, b) = views[l];
        let in_dim = activations[l].len();
        let out_dim = b.len();
        let base = offsets[l];
        // Weight and bias gradients.
        for o in 0..out_dim {
            let d = delta[o];
            let wrow = &mut grad[base + o * in_dim..base + (o + 1) * in_dim];
            for (g, a) in wrow.iter_mut().zip(&activations[l]) {
                *g = d * a;
            }
        }
        let bias_base = base + out_dim * in_dim;
        grad[bias_base..bias_base + out_dim].copy_from_slice(&delta);
        // Propagate to the previous layer.
        if l > 0 {
            let mut prev = vec![0.0; in_dim];
            for o in 0..out_dim {
                let d = delta[o];
                let row = &w[o * in_dim..(o + 1) * in_dim];
                for (p, wi) in prev.iter_mut().zip(row) {
                    *p += d * wi;
                }
            }
            for (p, z) in prev.iter_mut().zip(&pre_acts[l - 1]) {
                *p *= spec.activation.derivative(*z);
            }
            delta = prev;
        }
    }
}

// dLoss/dlogits for one example, for the data-dependent loss kinds.
fn dlogits_for(
    kind: LossKind,
    logits_row: &[f64],
    label: usize,
    ref_logits_row: Option<&[f64]>,
) -> Vec<f64> {
    match kind {
        LossKind::CrossEntropy | LossKind::NegativeCrossEntropy => {
            let mut d = softmax(logits_row);
            d[label] -= 1.0;
            if kind == LossKind::NegativeCrossEntropy {
                for v in d.iter_mut() {
                    *v = -*v;
                }
            }
            d
        }
        LossKind::KlToReference | LossKind::NegativeKlToReference => {
            let p_ref = softmax(ref_logits_row.expect("reference logits"));
            let q = softmax(logits_row);
            let mut d: Vec<f64> = q.iter().zip(&p_ref).map(|(qi, pi)| qi - pi).collect();
            if kind == LossKind::NegativeKlToReference {
                for v in d.iter_mut() {
                    *v = -*v;
                }
            }
            d
        }
        LossKind::L1ParamNorm => unreachable!("l1 gradient has no logit term"),
    }
}

/// Gradient of the parameter ℓ1 norm: sign(θ) with sign(0) = 0.
pub fn l1_sign_grad(theta: &ParamVector) -> ParamVector {
    ParamVector::from_vec(
        theta
            .iter()
            .map(|&v| {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            })
            .collect(),
    )
}

/// Per-example gradients of the loss. Their mean is the batch gradient.
pub fn per_example_grads(
    spec: &ModelSpec,
    theta: &ParamVector,
    batch: &LabeledBatch,
    kind: LossKind,
    reference: Option<&ParamVector>,
) -> Result<Vec<ParamVector>> {
    spec.check_theta(theta)?;
    spec.check_inputs(&batch.inputs)?;
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    if kind == LossKind::L1ParamNorm {
        // Data-independent: every example contributes the same subgradient.
        let g = l1_sign_grad(theta);
        return Ok(vec![g; batch.len()]);
    }
    if kind.needs_reference() && reference.is_none() {
        return Err(Error::MissingReference("kl_to_reference"));
    }
    let logits = forward(spec, theta, &batch.inputs)?;
    check_labels(&logits, &batch.labels)?;
    let ref_logits = match reference {
        Some(r) => Some(forward(spec, r, &batch.inputs)?),
        None => None,
    };
    let n = spec.param_count();
    let mut grads = Vec::with_capacity(batch.len());
    for r in 0..batch.len() {
        let dl = dlogits_for(
            kind,
            logits.row(r),
            batch.labels[r],
            ref_logits.as_ref().map(|m| m.row(r)),
        );
        let mut g = vec![0.0; n];
        backprop_example(spec, theta.as_slice(), batch.inputs.row(r), &dl, &mut g);
        grads.push(ParamVector::from_vec(g));
    }
    Ok(grads)
}

/// Exact analytic gradient of the mean batch loss.
pub fn grad(
    spec: &ModelSpec,
    theta: &ParamVector,
    batch: &LabeledBatch,
    kind: LossKind,
    reference: Option<&ParamVector>,
) -> Result<ParamVector> {
    if kind == LossKind::L1ParamNorm {
        spec.check_theta(theta)?;
        return Ok(l1_sign_grad(theta));
    }
    let per_example = per_example_grads(spec, theta, batch, kind, reference)?;
    mean_vector(&per_example)
}

/// Seeded parameter initialization: Glorot-uniform weights, zero biases.
pub fn init_params(spec: &ModelSpec, seed: u64) -> ParamVector {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(spec.param_count());
    for (in_dim, out_dim) in spec.layer_dims() {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        for _ in 0..out_dim * in_dim {
            values.push(rng.gen_range(-bound..bound));
        }
        values.extend(std::iter::repeat_n(0.0, out_dim));
    }
    ParamVector::from_vec(values)
}
