//! Synthetic classification datasets, forget/retain splits, and epoch batching.
//!
//! Everything here is pure given a seed: generation, splitting, relabeling,
//! and batch order are all driven by `ChaCha8Rng::seed_from_u64`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::LabeledBatch;

/// Which examples go into the forget set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// A random fraction of the whole training set.
    RandomFraction,
    /// A random fraction of one class's examples.
    ClassFraction,
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scenario::RandomFraction => write!(f, "random_fraction"),
            Scenario::ClassFraction => write!(f, "class_fraction"),
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random_fraction" => Ok(Scenario::RandomFraction),
            "class_fraction" => Ok(Scenario::ClassFraction),
            other => Err(Error::InvalidArgument(format!(
                "unknown scenario `{other}` (expected random_fraction|class_fraction)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub fraction: f64,
    pub target_class: Option<usize>,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "fraction must lie in (0, 1), got {}",
                self.fraction
            )));
        }
        if self.scenario == Scenario::ClassFraction && self.target_class.is_none() {
            return Err(Error::InvalidArgument(
                "class_fraction scenario needs a target_class".into(),
            ));
        }
        Ok(())
    }
}

/// Train/test data plus the forget/retain partition of the training set.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: LabeledBatch,
    pub test: LabeledBatch,
    pub retain: LabeledBatch,
    pub forget: LabeledBatch,
    pub scenario: Scenario,
    pub fraction: f64,
    pub target_class: Option<usize>,
    /// Indices into `train` of the forget (resp. retain) examples, sorted.
    pub forget_indices: Vec<usize>,
    pub retain_indices: Vec<usize>,
}

/// Class-conditional Gaussians with means on a centered scaled simplex.
///
/// Requires `num_classes <= dim` so the simplex fits. `separation` scales the
/// distance between class means against unit per-coordinate noise;
/// `separation = 0` collapses all classes onto one distribution.
pub fn make_gaussian_blobs(
    num_classes: usize,
    train_per_class: usize,
    test_per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<(LabeledBatch, LabeledBatch)> {
    if num_classes < 2 || num_classes > dim {
        return Err(Error::InvalidArgument(format!(
            "need 2 <= num_classes <= dim, got {num_classes} classes in dim {dim}"
        )));
    }
    if train_per_class < 2 {
        return Err(Error::InvalidArgument(
            "train_per_class must be at least 2".into(),
        ));
    }
    if separation < 0.0 {
        return Err(Error::InvalidArgument("separation must be >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    // Simplex vertices: scaled basis vectors, centered so the mean is 0.
    let mut means = vec![vec![0.0; dim]; num_classes];
    for (c, mean) in means.iter_mut().enumerate() {
        for (j, m) in mean.iter_mut().enumerate().take(num_classes) {
            let e = if j == c { 1.0 } else { 0.0 };
            *m = separation * (e - 1.0 / num_classes as f64);
        }
    }

    let draw = |per_class: usize, rng: &mut ChaCha8Rng| -> Result<LabeledBatch> {
        let mut rows = Vec::with_capacity(per_class * num_classes);
        let mut labels = Vec::with_capacity(per_class * num_classes);
        for (c, mean) in means.iter().enumerate() {
            for _ in 0..per_class {
                let row: Vec<f64> = mean.iter().map(|m| m + normal.sample(rng)).collect();
                rows.push(row);
                labels.push(c);
            }
        }
        LabeledBatch::new(Matrix::from_rows(&rows)?, labels)
    };

    let train = draw(train_per_class, &mut rng)?;
    let test = draw(test_per_class.max(1), &mut rng)?;
    Ok((train, test))
}

/// Two concentric rings in the plane; not linearly separable, so a hidden
/// layer is actually needed. Same (train, test) interface as the blobs.
pub fn make_rings(
    train_per_class: usize,
    test_per_class: usize,
    noise: f64,
    seed: u64,
) -> Result<(LabeledBatch, LabeledBatch)> {
    if train_per_class < 2 {
        return Err(Error::InvalidArgument(
            "train_per_class must be at least 2".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radial = Normal::new(0.0, noise.max(0.0)).expect("radial noise");
    let radii = [1.0, 2.0];

    let draw = |per_class: usize, rng: &mut ChaCha8Rng| -> Result<LabeledBatch> {
        let mut rows = Vec::with_capacity(per_class * 2);
        let mut labels = Vec::with_capacity(per_class * 2);
        for (c, &r0) in radii.iter().enumerate() {
            for _ in 0..per_class {
                let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                let r = r0 + radial.sample(rng);
                rows.push(vec![r * angle.cos(), r * angle.sin()]);
                labels.push(c);
            }
        }
        LabeledBatch::new(Matrix::from_rows(&rows)?, labels)
    };

    let train = draw(train_per_class, &mut rng)?;
    let test = draw(test_per_class.max(1), &mut rng)?;
    Ok((train, test))
}

/// Partition `train` into retain/forget per the scenario. Selection is
/// uniform without replacement under the scenario seed.
pub fn split_forget(
    train: &LabeledBatch,
    test: &LabeledBatch,
    config: &ScenarioConfig,
) -> Result<DatasetSplit> {
    config.validate()?;
    let n = train.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let pool: Vec<usize> = match config.scenario {
        Scenario::RandomFraction => (0..n).collect(),
        Scenario::ClassFraction => {
            let target = config.target_class.unwrap();
            let members: Vec<usize> = (0..n).filter(|&i| train.labels[i] == target).collect();
            if members.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "target class {target} has no members in the training set"
                )));
            }
            members
        }
    };
    let k = (config.fraction * pool.len() as f64).round() as usize;
    if k == 0 {
        return Err(Error::Empty("forget set"));
    }
    if k >= n {
        return Err(Error::Empty("retain set"));
    }
    let mut shuffled = pool;
    shuffled.shuffle(&mut rng);
    let mut forget_indices: Vec<usize> = shuffled[..k].to_vec();
    forget_indices.sort_unstable();
    let mut in_forget = vec![false; n];
    for &i in &forget_indices {
        in_forget[i] = true;
    }
    let retain_indices: Vec<usize> = (0..n).filter(|&i| !in_forget[i]).collect();

    Ok(DatasetSplit {
        retain: train.select(&retain_indices),
        forget: train.select(&forget_indices),
        train: train.clone(),
        test: test.clone(),
        scenario: config.scenario,
        fraction: config.fraction,
        target_class: config.target_class,
        forget_indices,
        retain_indices,
    })
}

/// Resample each label uniformly from the *other* classes; inputs untouched.
pub fn randomize_labels(
    batch: &LabeledBatch,
    num_classes: usize,
    seed: u64,
) -> Result<LabeledBatch> {
    if num_classes < 2 {
        return Err(Error::InvalidArgument(
            "num_classes must be at least 2".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = batch
        .labels
        .iter()
        .map(|&y| {
            let draw = rng.gen_range(0..num_classes - 1);
            if draw >= y {
                draw + 1
            } else {
                draw
            }
        })
        .collect();
    LabeledBatch::new(batch.inputs.clone(), labels)
}

/// One epoch of mini-batches: a seeded permutation cut into consecutive
/// chunks; the last chunk may be short.
pub fn batches(source: &LabeledBatch, batch_size: usize, seed: u64) -> Vec<LabeledBatch> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..source.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order
        .chunks(batch_size)
        .map(|chunk| source.select(chunk))
        .collect()
}

/// CSV rows `feature,...,label`, one per example. No header.
pub fn batch_to_csv(batch: &LabeledBatch) -> String {
    let mut out = String::new();
    for (row, &label) in batch.inputs.row_iter().zip(&batch.labels) {
        for v in row {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!("{label}\n"));
    }
    out
}

pub fn batch_from_csv(text: &str, path: &str) -> Result<LabeledBatch> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 2 {
            return Err(Error::Format {
                path: path.to_string(),
                message: format!("line {}: need at least one feature and a label", i + 1),
            });
        }
        let (feat, label) = fields.split_at(fields.len() - 1);
        let row = feat
            .iter()
            .map(|s| {
                s.parse::<f64>().map_err(|_| Error::Format {
                    path: path.to_string(),
                    message: format!("line {}: bad feature `{s}`", i + 1),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let y = label[0].parse::<usize>().map_err(|_| Error::Format {
            path: path.to_string(),
            message: format!("line {}: bad label `{}`", i + 1, label[0]),
        })?;
        rows.push(row);
        labels.push(y);
    }
    LabeledBatch::new(Matrix::from_rows(&rows)?, labels)
}

pub fn export_csv(path: &Path, batch: &LabeledBatch) -> Result<()> {
    std::fs::write(path, batch_to_csv(batch))?;
    Ok(())
}

pub fn import_csv(path: &Path) -> Result<LabeledBatch> {
    let text = std::fs::read_to_string(path)?;
    batch_from_csv(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_deterministic_per_seed() {
        let (a_train, a_test) = make_gaussian_blobs(4, 10, 5, 8, 2.0, 7).unwrap();
        let (b_train, b_test) = make_gaussian_blobs(4, 10, 5, 8, 2.0, 7).unwrap();
        assert_eq!(a_train, b_train);
        assert_eq!(a_test, b_test);
        let (c_train, _) = make_gaussian_blobs(4, 10, 5, 8, 2.0, 8).unwrap();
        assert_ne!(a_train, c_train);
    }

    #[test]
    fn split_sizes_random_fraction() {
        let (train, test) = make_gaussian_blobs(2, 50, 10, 4, 3.0, 1).unwrap();
        let cfg = ScenarioConfig {
            scenario: Scenario::RandomFraction,
            fraction: 0.5,
            target_class: None,
            seed: 3,
        };
        let split = split_forget(&train, &test, &cfg).unwrap();
        assert_eq!(split.forget.len(), 50);
        assert_eq!(split.retain.len(), 50);
        // Partition by index.
        let mut all: Vec<usize> = split
            .forget_indices
            .iter()
            .chain(&split.retain_indices)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn split_sizes_class_fraction() {
        let (train, test) = make_gaussian_blobs(2, 40, 10, 4, 3.0, 1).unwrap();
        let cfg = ScenarioConfig {
            scenario: Scenario::ClassFraction,
            fraction: 0.75,
            target_class: Some(1),
            seed: 3,
        };
        let split = split_forget(&train, &test, &cfg).unwrap();
        assert_eq!(split.forget.len(), 30);
        assert!(split.forget.labels.iter().all(|&y| y == 1));
    }

    #[test]
    fn split_is_deterministic() {
        let (train, test) = make_gaussian_blobs(3, 20, 5, 4, 1.0, 5).unwrap();
        let cfg = ScenarioConfig {
            scenario: Scenario::RandomFraction,
            fraction: 0.1,
            target_class: None,
            seed: 11,
        };
        let a = split_forget(&train, &test, &cfg).unwrap();
        let b = split_forget(&train, &test, &cfg).unwrap();
        assert_eq!(a.forget_indices, b.forget_indices);
    }

    #[test]
    fn relabel_never_keeps_label_and_flips_binary() {
        let (train, _) = make_gaussian_blobs(2, 30, 5, 4, 1.0, 2).unwrap();
        let relabeled = randomize_labels(&train, 2, 9).unwrap();
        assert_eq!(relabeled.inputs, train.inputs);
        for (a, b) in train.labels.iter().zip(&relabeled.labels) {
            assert_ne!(a, b);
            // 2 classes: the only alternative is the flip.
            assert_eq!(*b, 1 - *a);
        }
    }

    #[test]
    fn relabel_alternatives_are_uniform() {
        // 10 classes, all originals 0; counts over the 9 alternatives must sit
        // within 3 sigma of n/9 (multinomial per-cell bound).
        let n = 10_000;
        let inputs = Matrix::from_vec(n, 1, vec![0.0; n]).unwrap();
        let batch = LabeledBatch::new(inputs, vec![0; n]).unwrap();
        let relabeled = randomize_labels(&batch, 10, 123).unwrap();
        let mut counts = [0usize; 10];
        for &y in &relabeled.labels {
            counts[y] += 1;
        }
        assert_eq!(counts[0], 0);
        let p = 1.0 / 9.0;
        let mean = n as f64 * p;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for &c in &counts[1..] {
            assert!(
                (c as f64 - mean).abs() <= 3.0 * sigma,
                "count {c} vs mean {mean:.1} (sigma {sigma:.1})"
            );
        }
    }

    #[test]
    fn batches_partition_the_dataset() {
        let (train, _) = make_gaussian_blobs(2, 5, 2, 4, 1.0, 2).unwrap();
        let chunks = batches(&train, 4, 17);
        assert_eq!(
            chunks.iter().map(LabeledBatch::len).collect::<Vec<_>>(),
            vec![4, 4, 2]
        );
        // Union of one epoch's batches = dataset exactly once (as multiset of rows).
        let mut seen: Vec<Vec<u64>> = chunks
            .iter()
            .flat_map(|b| b.inputs.row_iter().map(|r| r.iter().map(|v| v.to_bits()).collect()))
            .collect();
        let mut expected: Vec<Vec<u64>> = train
            .inputs
            .row_iter()
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        seen.sort();
        expected.sort();
        assert_eq!(seen, expected);
        // Determinism.
        assert_eq!(batches(&train, 4, 17), chunks);
    }

    #[test]
    fn csv_roundtrip() {
        let (train, _) = make_gaussian_blobs(3, 4, 2, 4, 1.5, 3).unwrap();
        let text = batch_to_csv(&train);
        let back = batch_from_csv(&text, "mem").unwrap();
        assert_eq!(back, train);
    }

    #[test]
    fn separable_limit_and_chance_limit() {
        // separation = 100: a nearest-mean rule classifies the test set perfectly.
        let (train, test) = make_gaussian_blobs(4, 50, 25, 8, 100.0, 21).unwrap();
        let means = class_means(&train, 4);
        let acc = nearest_mean_accuracy(&test, &means);
        assert_eq!(acc, 1.0);

        // separation = 0: nearest-mean accuracy is chance within 5% at n=2000.
        let (train0, test0) = make_gaussian_blobs(4, 300, 500, 8, 0.0, 22).unwrap();
        let means0 = class_means(&train0, 4);
        let acc0 = nearest_mean_accuracy(&test0, &means0);
        assert!((acc0 - 0.25).abs() < 0.05, "chance-level accuracy, got {acc0}");
    }

    fn class_means(batch: &LabeledBatch, k: usize) -> Vec<Vec<f64>> {
        let dim = batch.inputs.cols();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (row, &y) in batch.inputs.row_iter().zip(&batch.labels) {
            for (s, v) in sums[y].iter_mut().zip(row) {
                *s += v;
            }
            counts[y] += 1;
        }
        for (s, &c) in sums.iter_mut().zip(&counts) {
            for v in s.iter_mut() {
                *v /= c.max(1) as f64;
            }
        }
        sums
    }

    fn nearest_mean_accuracy(batch: &LabeledBatch, means: &[Vec<f64>]) -> f64 {
        let mut correct = 0;
        for (row, &y) in batch.inputs.row_iter().zip(&batch.labels) {
            let pred = means
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    let da: f64 = a.iter().zip(row).map(|(m, v)| (m - v) * (m - v)).sum();
                    let db: f64 = b.iter().zip(row).map(|(m, v)| (m - v) * (m - v)).sum();
                    da.partial_cmp(&db).unwrap()
                })
                .map(|(i, _)| i)
                .unwrap();
            if pred == y {
                correct += 1;
            }
        }
        correct as f64 / batch.len() as f64
    }
}
