use std::borrow::Borrow;

use crate::error::{Error, Result};
use crate::prob::ProbVector;

/// Weighted average of union-space distributions:
/// `q = sum_i w_i p_i / sum_i w_i`.
///
/// Weights are normalized before accumulation, so equal weights over
/// identical inputs return the input bit-for-bit and a single non-zero
/// weight returns that member's vector unchanged.
pub fn fuse<P: Borrow<ProbVector>>(mapped: &[P], weights: &[f64]) -> Result<ProbVector> {
    if mapped.is_empty() {
        return Err(Error::Contract("nothing to fuse".into()));
    }
    if mapped.len() != weights.len() {
        return Err(Error::Contract(format!(
            "{} distributions but {} weights",
            mapped.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Contract(format!(
            "weights must be finite and non-negative: {weights:?}"
        )));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::Contract("ensemble weights sum to zero".into()));
    }
    let width = mapped[0].borrow().len();
    if let Some(bad) = mapped
        .iter()
        .map(Borrow::borrow)
        .find(|p: &&ProbVector| p.len() != width)
    {
        return Err(Error::Contract(format!(
            "distribution widths differ: {width} vs {}",
            bad.len()
        )));
    }

    let mut out = vec![0.0; width];
    for (p, &w) in mapped.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let share = w / total;
        for (o, &v) in out.iter_mut().zip(p.borrow().values()) {
            *o += share * v;
        }
    }
    Ok(ProbVector::from_trusted(out))
}
