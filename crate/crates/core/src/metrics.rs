//! Evaluation metrics: accuracies, relative unlearning accuracy, fidelity,
//! and population-based membership inference attacks.
//!
//! UA / RA / TA are plain accuracies on the forget / retain / test sets.
//! rUA and FID compare the unlearned model against the ideal model retrained
//! without the forget data. The MIA trains one linear decision rule per
//! feature family (members drawn from the retain set, non-members from the
//! test set, balanced by seeded subsampling) and reports the mean predicted
//! membership over the forget set — lower is better.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::nn::{forward, log_softmax, LabeledBatch, ModelSpec};
use crate::params::ParamVector;
use crate::svm::LinearClassifier;

/// Feature families for the membership attacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MiaFeatureKind {
    /// 1 if the model classifies the example correctly, else 0.
    Correctness,
    /// Softmax probability of the true label.
    Confidence,
    /// The raw logit vector.
    Logits,
    /// Shannon entropy of the softmax output (natural log).
    Entropy,
    /// Modified entropy: -(1 - p_y) ln p_y - sum_{i != y} p_i ln(1 - p_i).
    MixEntropy,
}

pub const MIA_FEATURES: [MiaFeatureKind; 5] = [
    MiaFeatureKind::Correctness,
    MiaFeatureKind::Confidence,
    MiaFeatureKind::Logits,
    MiaFeatureKind::Entropy,
    MiaFeatureKind::MixEntropy,
];

impl std::fmt::Display for MiaFeatureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.name())
    }
}

impl MiaFeatureKind {
    pub fn name(self) -> &'static str {
        match self {
            MiaFeatureKind::Correctness => "correctness",
            MiaFeatureKind::Confidence => "confidence",
            MiaFeatureKind::Logits => "logits",
            MiaFeatureKind::Entropy => "entropy",
            MiaFeatureKind::MixEntropy => "mix_entropy",
        }
    }
}

/// Attack scores per feature family, each in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiaScores {
    pub correctness: f64,
    pub confidence: f64,
    pub logits: f64,
    pub entropy: f64,
    pub mix_entropy: f64,
}

impl MiaScores {
    pub fn get(&self, kind: MiaFeatureKind) -> f64 {
        match kind {
            MiaFeatureKind::Correctness => self.correctness,
            MiaFeatureKind::Confidence => self.confidence,
            MiaFeatureKind::Logits => self.logits,
            MiaFeatureKind::Entropy => self.entropy,
            MiaFeatureKind::MixEntropy => self.mix_entropy,
        }
    }
}

/// Everything measured at one epoch boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub epoch: usize,
    pub ua: f64,
    pub ra: f64,
    pub ta: f64,
    pub rua: f64,
    pub fid: f64,
    pub mia: MiaScores,
    pub rte_seconds: f64,
}

/// Argmax predictions; ties resolve to the lowest class index.
pub fn predictions(spec: &ModelSpec, theta: &ParamVector, batch: &LabeledBatch) -> Result<Vec<usize>> {
    let logits = forward(spec, theta, &batch.inputs)?;
    Ok((0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect())
}

/// Percentage of argmax-correct predictions.
pub fn accuracy(spec: &ModelSpec, theta: &ParamVector, batch: &LabeledBatch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("accuracy batch"));
    }
    let preds = predictions(spec, theta, batch)?;
    let correct = preds.iter().zip(&batch.labels).filter(|(p, y)| p == y).count();
    Ok(100.0 * correct as f64 / batch.len() as f64)
}

/// Relative unlearning accuracy: forget-set accuracy of the unlearned model
/// minus that of the ideal model. Close to zero is good.
pub fn rua(
    spec: &ModelSpec,
    theta_unlearned: &ParamVector,
    theta_ideal: &ParamVector,
    forget: &LabeledBatch,
) -> Result<f64> {
    Ok(accuracy(spec, theta_unlearned, forget)? - accuracy(spec, theta_ideal, forget)?)
}

/// Percentage of forget examples on which the two models predict the same
/// class. Symmetric in its two models.
pub fn fidelity(
    spec: &ModelSpec,
    theta_unlearned: &ParamVector,
    theta_ideal: &ParamVector,
    forget: &LabeledBatch,
) -> Result<f64> {
    if forget.is_empty() {
        return Err(Error::Empty("fidelity forget set"));
    }
    let a = predictions(spec, theta_unlearned, forget)?;
    let b = predictions(spec, theta_ideal, forget)?;
    let agree = a.iter().zip(&b).filter(|(x, y)| x == y).count();
    Ok(100.0 * agree as f64 / forget.len() as f64)
}

// ln with a floor so saturated softmax outputs stay finite.
fn safe_ln(p: f64) -> f64 {
    p.max(1e-300).ln()
}

/// Per-example feature vectors for one feature family.
pub fn mia_features(
    spec: &ModelSpec,
    theta: &ParamVector,
    batch: &LabeledBatch,
    kind: MiaFeatureKind,
) -> Result<Vec<Vec<f64>>> {
    let logits = forward(spec, theta, &batch.inputs)?;
    let mut rows = Vec::with_capacity(batch.len());
    for (r, &y) in batch.labels.iter().enumerate() {
        let row = logits.row(r);
        if y >= row.len() {
            return Err(Error::InvalidArgument(format!(
                "label {y} out of range for {} classes",
                row.len()
            )));
        }
        let ls = log_softmax(row);
        let probs: Vec<f64> = ls.iter().map(|&l| l.exp()).collect();
        let feature = match kind {
            MiaFeatureKind::Correctness => {
                let mut best = 0;
                for (i, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = i;
                    }
                }
                vec![if best == y { 1.0 } else { 0.0 }]
            }
            MiaFeatureKind::Confidence => vec![probs[y]],
            MiaFeatureKind::Logits => row.to_vec(),
            MiaFeatureKind::Entropy => {
                let h: f64 = probs
                    .iter()
                    .zip(&ls)
                    .map(|(&p, &l)| if p > 0.0 { -p * l } else { 0.0 })
                    .sum();
                vec![h]
            }
            MiaFeatureKind::MixEntropy => {
                let mut v = -(1.0 - probs[y]) * safe_ln(probs[y]);
                for (i, &p) in probs.iter().enumerate() {
                    if i != y {
                        v -= p * safe_ln(1.0 - p);
                    }
                }
                vec![v]
            }
        };
        rows.push(feature);
    }
    Ok(rows)
}

/// Outcome of one attack, with the balanced training pool kept for checks.
pub struct MiaAttack {
    pub score: f64,
    pub training_accuracy: f64,
    pub degenerate: bool,
}

/// Train a membership decision rule for one feature family and score the
/// forget set. Members come from the retain set, non-members from the test
/// set; the larger side is subsampled (seeded) so training is balanced.
pub fn mia_attack_full(
    spec: &ModelSpec,
    theta: &ParamVector,
    split: &DatasetSplit,
    kind: MiaFeatureKind,
    seed: u64,
) -> Result<MiaAttack> {
    if split.retain.is_empty() || split.test.is_empty() {
        return Err(Error::Empty("MIA member/non-member pools"));
    }
    let members = mia_features(spec, theta, &split.retain, kind)?;
    let non_members = mia_features(spec, theta, &split.test, kind)?;
    let k = members.len().min(non_members.len());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |pool: &[Vec<f64>], rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        if pool.len() == k {
            return pool.to_vec();
        }
        let mut idx: Vec<usize> = (0..pool.len()).collect();
        idx.shuffle(rng);
        idx.truncate(k);
        idx.sort_unstable();
        idx.into_iter().map(|i| pool[i].clone()).collect()
    };
    let member_rows = pick(&members, &mut rng);
    let non_member_rows = pick(&non_members, &mut rng);

    let mut features = member_rows;
    let mut labels = vec![true; k];
    features.extend(non_member_rows);
    labels.extend(std::iter::repeat_n(false, k));

    let clf = LinearClassifier::train(&features, &labels)?;
    if clf.degenerate {
        eprintln!("warning: degenerate {kind} features, MIA falls back to 1/2");
    }
    let training_accuracy = if clf.degenerate {
        0.5
    } else {
        clf.training_accuracy(&features, &labels)
    };

    let forget_rows = mia_features(spec, theta, &split.forget, kind)?;
    let score = forget_rows
        .iter()
        .map(|x| clf.predict_membership(x))
        .sum::<f64>()
        / forget_rows.len() as f64;
    Ok(MiaAttack {
        score,
        training_accuracy,
        degenerate: clf.degenerate,
    })
}

/// Attack score in [0, 1]; see [`mia_attack_full`].
pub fn mia_attack(
    spec: &ModelSpec,
    theta: &ParamVector,
    split: &DatasetSplit,
    kind: MiaFeatureKind,
    seed: u64,
) -> Result<f64> {
    Ok(mia_attack_full(spec, theta, split, kind, seed)?.score)
}

fn mia_all(
    spec: &ModelSpec,
    theta: &ParamVector,
    split: &DatasetSplit,
    seed: u64,
) -> Result<MiaScores> {
    Ok(MiaScores {
        correctness: mia_attack(spec, theta, split, MiaFeatureKind::Correctness, seed)?,
        confidence: mia_attack(spec, theta, split, MiaFeatureKind::Confidence, seed)?,
        logits: mia_attack(spec, theta, split, MiaFeatureKind::Logits, seed)?,
        entropy: mia_attack(spec, theta, split, MiaFeatureKind::Entropy, seed)?,
        mix_entropy: mia_attack(spec, theta, split, MiaFeatureKind::MixEntropy, seed)?,
    })
}

/// Assemble the full per-epoch report. Pure given inputs and the MIA seed.
pub fn report(
    spec: &ModelSpec,
    theta_unlearned: &ParamVector,
    theta_ideal: &ParamVector,
    split: &DatasetSplit,
    epoch: usize,
    rte_seconds: f64,
    mia_seed: u64,
) -> Result<MetricsReport> {
    Ok(MetricsReport {
        epoch,
        ua: accuracy(spec, theta_unlearned, &split.forget)?,
        ra: accuracy(spec, theta_unlearned, &split.retain)?,
        ta: accuracy(spec, theta_unlearned, &split.test)?,
        rua: rua(spec, theta_unlearned, theta_ideal, &split.forget)?,
        fid: fidelity(spec, theta_unlearned, theta_ideal, &split.forget)?,
        mia: mia_all(spec, theta_unlearned, split, mia_seed)?,
        rte_seconds,
    })
}

/// Exact column order of the per-run metrics CSV.
pub const REPORT_CSV_HEADER: &str = "run_id,seed,method,addon,epoch,ua,ra,ta,rua,fid,\
mia_correctness,mia_confidence,mia_logits,mia_entropy,mia_mix_entropy,rte_seconds";

/// One CSV row. Floats use shortest round-trip formatting, so parsing the
/// row back recovers them exactly.
pub fn report_csv_row(
    run_id: &str,
    seed: u64,
    method: &str,
    addon: &str,
    r: &MetricsReport,
) -> String {
    format!(
        "{run_id},{seed},{method},{addon},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.epoch,
        r.ua,
        r.ra,
        r.ta,
        r.rua,
        r.fid,
        r.mia.correctness,
        r.mia.confidence,
        r.mia.logits,
        r.mia.entropy,
        r.mia.mix_entropy,
        r.rte_seconds
    )
}

/// Parse one row produced by [`report_csv_row`], returning
/// `(run_id, seed, method, addon, report)`.
pub fn parse_report_csv_row(line: &str) -> Result<(String, u64, String, String, MetricsReport)> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 16 {
        return Err(Error::Format {
            path: "metrics csv".into(),
            message: format!("expected 16 fields, got {}", fields.len()),
        });
    }
    let parse_f = |s: &str| -> Result<f64> {
        s.parse().map_err(|_| Error::Format {
            path: "metrics csv".into(),
            message: format!("bad float `{s}`"),
        })
    };
    let report = MetricsReport {
        epoch: fields[4].parse().map_err(|_| Error::Format {
            path: "metrics csv".into(),
            message: format!("bad epoch `{}`", fields[4]),
        })?,
        ua: parse_f(fields[5])?,
        ra: parse_f(fields[6])?,
        ta: parse_f(fields[7])?,
        rua: parse_f(fields[8])?,
        fid: parse_f(fields[9])?,
        mia: MiaScores {
            correctness: parse_f(fields[10])?,
            confidence: parse_f(fields[11])?,
            logits: parse_f(fields[12])?,
            entropy: parse_f(fields[13])?,
            mix_entropy: parse_f(fields[14])?,
        },
        rte_seconds: parse_f(fields[15])?,
    };
    let seed = fields[1].parse().map_err(|_| Error::Format {
        path: "metrics csv".into(),
        message: format!("bad seed `{}`", fields[1]),
    })?;
    Ok((
        fields[0].to_string(),
        seed,
        fields[2].to_string(),
        fields[3].to_string(),
        report,
    ))
}
