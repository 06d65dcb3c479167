//! Flat parameter vector shared by gradients, masks, and updates.
//!
//! Every quantity that lives in parameter space (parameters, gradients,
//! first/second moments, update directions) is a `ParamVector` of the same
//! length, so componentwise operations line up by construction.

use crate::error::{Error, Result};

/// Flat vector of model parameters (or any parameter-space quantity).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(n: usize) -> Self {
        Self {
            values: vec![0.0; n],
        }
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.values.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self + factor * other`, checking lengths.
    pub fn add_scaled(&self, other: &ParamVector, factor: f64) -> Result<ParamVector> {
        self.check_len(other, "ParamVector::add_scaled")?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + factor * b)
            .collect();
        Ok(ParamVector { values })
    }

    pub fn scaled(&self, factor: f64) -> ParamVector {
        ParamVector {
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_len(other, "ParamVector::dot")?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum())
    }

    /// ℓq norm for q >= 1.
    pub fn norm_q(&self, q: f64) -> f64 {
        debug_assert!(q >= 1.0);
        if q == 1.0 {
            return self.values.iter().map(|v| v.abs()).sum();
        }
        if q == 2.0 {
            return self.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        }
        self.values
            .iter()
            .map(|v| v.abs().powf(q))
            .sum::<f64>()
            .powf(1.0 / q)
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Number of nonzero components (ℓ0 pseudo-norm).
    pub fn count_nonzero(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }

    fn check_len(&self, other: &ParamVector, context: &'static str) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.len(),
                actual: other.len(),
            });
        }
        Ok(())
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        Self { values }
    }
}

/// Mean of a list of equally long vectors; summation order is fixed
/// (index-major) so results are bit-reproducible.
pub fn mean_vector(vectors: &[ParamVector]) -> Result<ParamVector> {
    let first = vectors.first().ok_or(Error::Empty("vector list"))?;
    let n = first.len();
    let mut acc = vec![0.0; n];
    for v in vectors {
        if v.len() != n {
            return Err(Error::DimensionMismatch {
                context: "mean_vector",
                expected: n,
                actual: v.len(),
            });
        }
        for (a, x) in acc.iter_mut().zip(v.iter()) {
            *a += x;
        }
    }
    let inv = 1.0 / vectors.len() as f64;
    for a in acc.iter_mut() {
        *a *= inv;
    }
    Ok(ParamVector::from_vec(acc))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_scaled_rejects_length_mismatch() {
        let a = ParamVector::from_vec(vec![1.0, 2.0]);
        let b = ParamVector::from_vec(vec![1.0]);
        assert!(a.add_scaled(&b, 1.0).is_err());
    }

    #[test]
    fn norms() {
        let v = ParamVector::from_vec(vec![3.0, -4.0, 0.0]);
        assert_eq!(v.norm_q(1.0), 7.0);
        assert_eq!(v.norm_q(2.0), 5.0);
        assert_eq!(v.norm_inf(), 4.0);
        assert_eq!(v.count_nonzero(), 2);
    }

    #[test]
    fn mean_of_two() {
        let m = mean_vector(&[
            ParamVector::from_vec(vec![0.0, 2.0]),
            ParamVector::from_vec(vec![2.0, 4.0]),
        ])
        .unwrap();
        assert_eq!(m.as_slice(), &[1.0, 3.0]);
    }
}
