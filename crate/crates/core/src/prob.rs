use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum deviation of a distribution's total mass from 1.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

/// A probability distribution over a vocabulary, dense and indexed by token
/// ID (member vocabularies) or by union column (the union vocabulary).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Validates finiteness, non-negativity and total mass.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Contract("probability vector is empty".into()));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(Error::Contract(format!("probability entry {i} is {v}")));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::Contract(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(ProbVector(values))
    }

    /// Normalizes non-negative finite weights into a distribution.
    pub fn from_weights(mut weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Contract("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Contract("weights sum to zero".into()));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        ProbVector::new(weights)
    }

    pub fn uniform(len: usize) -> Self {
        assert!(len > 0, "uniform distribution over an empty vocabulary");
        ProbVector(vec![1.0 / len as f64; len])
    }

    pub fn one_hot(len: usize, index: usize) -> Self {
        assert!(index < len, "one-hot index {index} out of range {len}");
        let mut v = vec![0.0; len];
        v[index] = 1.0;
        ProbVector(v)
    }

    /// Callers guarantee the simplex invariants already hold.
    pub(crate) fn from_trusted(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite() && *v >= 0.0));
        debug_assert!((values.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOLERANCE);
        ProbVector(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.0[index]
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate().skip(1) {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }

    /// Largest entry: the confidence score of this distribution.
    pub fn max(&self) -> f64 {
        self.0[self.argmax()]
    }

    /// The `k` most probable non-zero entries, descending, ties by index.
    pub fn top_k(&self, k: usize) -> Vec<(usize, f64)> {
        let mut entries: Vec<(usize, f64)> = self.0.iter().copied().enumerate().filter(|(_, p)| *p > 0.0).collect();
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        entries.truncate(k);
        entries
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        ProbVector::new(values)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Self {
        p.0
    }
}
