use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::ProbVector;

/// How the next token is drawn from the fused distribution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy", content = "value")]
pub enum SamplingPolicy {
    /// Argmax, lowest index on ties. Consumes no randomness.
    #[default]
    Greedy,
    /// Sample from `q^(1/tau)`, renormalized.
    Temperature(f64),
    /// Nucleus sampling: the smallest descending-probability prefix whose
    /// mass reaches `p`, renormalized.
    TopP(f64),
}

impl SamplingPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SamplingPolicy::Greedy => Ok(()),
            SamplingPolicy::Temperature(t) if t.is_finite() && t > 0.0 => Ok(()),
            SamplingPolicy::TopP(p) if p > 0.0 && p <= 1.0 => Ok(()),
            other => Err(Error::Config(format!("invalid sampling policy {other:?}"))),
        }
    }
}

/// Picks a column of `q`. Stochastic policies draw exactly one uniform
/// number from `rng` per call.
pub fn select_token<R: Rng + ?Sized>(q: &ProbVector, policy: SamplingPolicy, rng: &mut R) -> usize {
    match policy {
        SamplingPolicy::Greedy => q.argmax(),
        SamplingPolicy::Temperature(tau) => {
            let log_max = q.max().ln();
            let weights: Vec<(usize, f64)> = q
                .values()
                .iter()
                .enumerate()
                .filter(|(_, p)| **p > 0.0)
                .map(|(i, p)| (i, ((p.ln() - log_max) / tau).exp()))
                .collect();
            draw(&weights, rng.gen::<f64>())
        }
        SamplingPolicy::TopP(top_p) => {
            let mut order: Vec<(usize, f64)> = q
                .values()
                .iter()
                .copied()
                .enumerate()
                .filter(|(_, p)| *p > 0.0)
                .collect();
            order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let mut mass = 0.0;
            let mut keep = order.len();
            for (n, (_, p)) in order.iter().enumerate() {
                mass += p;
                if mass >= top_p {
                    keep = n + 1;
                    break;
                }
            }
            order.truncate(keep);
            draw(&order, rng.gen::<f64>())
        }
    }
}

/// Inverse-CDF draw over unnormalized `(index, weight)` pairs.
fn draw(weights: &[(usize, f64)], u: f64) -> usize {
    let total: f64 = weights.iter().map(|w| w.1).sum();
    let target = u * total;
    let mut cum = 0.0;
    for &(i, w) in weights {
        cum += w;
        if target < cum {
            return i;
        }
    }
    weights.last().expect("distribution has a non-zero entry").0
}
