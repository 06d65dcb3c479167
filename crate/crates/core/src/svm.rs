//! Deterministic linear max-margin classifier for membership inference.
//!
//! A small stand-in for a library SVM: soft-margin hinge loss with an L2
//! penalty (`C = 1`, i.e. penalty weight `1/(C*n)`), full-batch subgradient
//! descent with a `1/sqrt(t)` step decay, 2000 iterations, zero
//! initialization. Features are standardized with statistics from the
//! training rows. No randomness anywhere, so retraining on the same data
//! reproduces the same decision rule bit for bit.

use crate::error::{Error, Result};

const ITERATIONS: usize = 2000;
const BASE_STEP: f64 = 0.5;
const COST: f64 = 1.0;
const VARIANCE_FLOOR: f64 = 1e-12;

/// Trained decision rule: `sign(w . standardize(x) + b)`.
#[derive(Debug, Clone)]
pub struct LinearClassifier {
    w: Vec<f64>,
    b: f64,
    means: Vec<f64>,
    stds: Vec<f64>,
    /// Every feature had (near-)zero variance; the rule is uninformative.
    pub degenerate: bool,
}

impl LinearClassifier {
    /// `labels[i]` is true for the positive (member) class.
    pub fn train(features: &[Vec<f64>], labels: &[bool]) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Empty("classifier training set"));
        }
        if features.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                context: "classifier labels",
                expected: features.len(),
                actual: labels.len(),
            });
        }
        let dim = features[0].len();
        let n = features.len() as f64;

        let mut means = vec![0.0; dim];
        for row in features {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in means.iter_mut() {
            *m /= n;
        }
        let mut vars = vec![0.0; dim];
        for row in features {
            for ((s, v), m) in vars.iter_mut().zip(row).zip(&means) {
                let d = v - m;
                *s += d * d;
            }
        }
        let mut degenerate = true;
        let stds: Vec<f64> = vars
            .iter()
            .map(|&s| {
                let var = s / n;
                if var > VARIANCE_FLOOR {
                    degenerate = false;
                    var.sqrt()
                } else {
                    1.0 // constant feature: centered to 0, carries no signal
                }
            })
            .collect();
        if degenerate {
            return Ok(Self {
                w: vec![0.0; dim],
                b: 0.0,
                means,
                stds,
                degenerate: true,
            });
        }

        let standardized: Vec<Vec<f64>> = features
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&means)
                    .zip(&stds)
                    .map(|((v, m), s)| (v - m) / s)
                    .collect()
            })
            .collect();
        let ys: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();

        let lambda = 1.0 / (COST * n);
        let mut w = vec![0.0; dim];
        let mut b = 0.0;
        let mut grad_w = vec![0.0; dim];
        for t in 0..ITERATIONS {
            for (g, wi) in grad_w.iter_mut().zip(&w) {
                *g = lambda * wi;
            }
            let mut grad_b = 0.0;
            for (row, &y) in standardized.iter().zip(&ys) {
                let margin = y * (dot(&w, row) + b);
                if margin < 1.0 {
                    for (g, x) in grad_w.iter_mut().zip(row) {
                        *g -= y * x / n;
                    }
                    grad_b -= y / n;
                }
            }
            let step = BASE_STEP / ((t + 1) as f64).sqrt();
            for (wi, g) in w.iter_mut().zip(&grad_w) {
                *wi -= step * g;
            }
            b -= step * grad_b;
        }

        Ok(Self {
            w,
            b,
            means,
            stds,
            degenerate: false,
        })
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        let mut acc = self.b;
        for ((v, m), (s, wi)) in x.iter().zip(&self.means).zip(self.stds.iter().zip(&self.w)) {
            acc += wi * (v - m) / s;
        }
        acc
    }

    /// Predicted membership as 0.0 / 1.0 (0.5 when degenerate).
    pub fn predict_membership(&self, x: &[f64]) -> f64 {
        if self.degenerate {
            return 0.5;
        }
        if self.decision(x) > 0.0 {
            1.0
        } else {
            0.0
        }
    }

    /// Fraction of training rows the rule classifies correctly.
    pub fn training_accuracy(&self, features: &[Vec<f64>], labels: &[bool]) -> f64 {
        let correct = features
            .iter()
            .zip(labels)
            .filter(|(x, &y)| (self.decision(x) > 0.0) == y)
            .count();
        correct as f64 / features.len() as f64
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_disjoint_clusters() {
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            features.push(vec![2.0 + 0.01 * i as f64, 1.0]);
            labels.push(true);
            features.push(vec![-2.0 - 0.01 * i as f64, 1.0]);
            labels.push(false);
        }
        let clf = LinearClassifier::train(&features, &labels).unwrap();
        assert!(!clf.degenerate);
        assert_eq!(clf.training_accuracy(&features, &labels), 1.0);
        assert_eq!(clf.predict_membership(&[3.0, 1.0]), 1.0);
        assert_eq!(clf.predict_membership(&[-3.0, 1.0]), 0.0);
    }

    #[test]
    fn degenerate_features_fall_back_to_half() {
        let features = vec![vec![1.0], vec![1.0], vec![1.0], vec![1.0]];
        let labels = vec![true, false, true, false];
        let clf = LinearClassifier::train(&features, &labels).unwrap();
        assert!(clf.degenerate);
        assert_eq!(clf.predict_membership(&[1.0]), 0.5);
    }

    #[test]
    fn training_is_deterministic() {
        let features: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()])
            .collect();
        let labels: Vec<bool> = (0..40).map(|i| i % 2 == 0).collect();
        let a = LinearClassifier::train(&features, &labels).unwrap();
        let b = LinearClassifier::train(&features, &labels).unwrap();
        assert_eq!(a.w, b.w);
        assert_eq!(a.b, b.b);
    }

    #[test]
    fn balanced_training_accuracy_is_at_least_chance() {
        // Overlapping clusters: the rule must still do no worse than chance
        // on its own training data.
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..50 {
            let t = i as f64 * 0.7;
            features.push(vec![t.sin() + 0.5, t.cos()]);
            labels.push(true);
            features.push(vec![t.sin() - 0.5, -t.cos()]);
            labels.push(false);
        }
        let clf = LinearClassifier::train(&features, &labels).unwrap();
        assert!(clf.training_accuracy(&features, &labels) >= 0.5);
    }
}
