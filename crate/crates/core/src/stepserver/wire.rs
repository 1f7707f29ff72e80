//! Wire protocol v1: JSON bodies over HTTP POST.
//!
//! | route             | request                      | response                                   |
//! |-------------------|------------------------------|--------------------------------------------|
//! | `/create_session` | `{prompt_ids: [int]}`        | `{session_id: string}`                     |
//! | `/step`           | `{session_id}`               | `{probs: [float]}` or `{topk, rest_mass}`  |
//! | `/append`         | `{session_id, ids: [int]}`   | `{prefix_len: int}`                        |
//! | `/vocab`          | empty                        | portable vocab file body (text)            |
//!
//! Failures carry `{error: {code, message}}` with a non-2xx status.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{ProbVector, SIMPLEX_TOLERANCE};
use crate::vocab::TokenId;

pub const ROUTE_CREATE_SESSION: &str = "/create_session";
pub const ROUTE_STEP: &str = "/step";
pub const ROUTE_APPEND: &str = "/append";
pub const ROUTE_VOCAB: &str = "/vocab";

/// Mass deviation beyond which a peer's distribution is rejected.
pub const WIRE_MASS_TOLERANCE: f64 = 1e-4;

pub mod codes {
    pub const SESSION_NOT_FOUND: &str = "session_not_found";
    pub const BAD_IDS: &str = "bad_ids";
    pub const BAD_REQUEST: &str = "bad_request";
    pub const INTERNAL: &str = "internal";
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CreateSessionRequest {
    pub prompt_ids: Vec<TokenId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CreateSessionResponse {
    pub session_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRequest {
    pub session_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepResponse {
    Dense { probs: Vec<f64> },
    Sparse { topk: Vec<(TokenId, f64)>, rest_mass: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppendRequest {
    pub session_id: String,
    pub ids: Vec<TokenId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppendResponse {
    pub prefix_len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

impl ErrorBody {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        ErrorBody {
            error: ErrorDetail {
                code: code.to_string(),
                message: message.into(),
            },
        }
    }
}

impl StepResponse {
    pub fn dense(p: &ProbVector) -> Self {
        StepResponse::Dense {
            probs: p.values().to_vec(),
        }
    }

    /// Keeps the `k` largest entries; the rest travels as `rest_mass`.
    pub fn sparse(p: &ProbVector, k: usize) -> Self {
        let mut entries: Vec<(TokenId, f64)> = p.values().iter().enumerate().map(|(i, &v)| (i as TokenId, v)).collect();
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        entries.truncate(k);
        let listed: f64 = entries.iter().map(|e| e.1).sum();
        StepResponse::Sparse {
            topk: entries,
            rest_mass: (1.0 - listed).max(0.0),
        }
    }

    /// Decodes into a distribution over `vocab_size` tokens, rejecting
    /// malformed payloads. Unlisted IDs of a sparse payload share
    /// `rest_mass` uniformly.
    pub fn into_distribution(self, vocab_size: usize) -> Result<ProbVector> {
        let values = match self {
            StepResponse::Dense { probs } => {
                if probs.len() != vocab_size {
                    return Err(Error::Protocol(format!(
                        "peer sent {} probabilities for a vocabulary of {vocab_size}",
                        probs.len()
                    )));
                }
                probs
            }
            StepResponse::Sparse { topk, rest_mass } => {
                if !(rest_mass.is_finite() && rest_mass >= 0.0) {
                    return Err(Error::Protocol(format!("invalid rest_mass {rest_mass}")));
                }
                let mut values = vec![f64::NAN; vocab_size];
                for &(id, p) in &topk {
                    let slot = values
                        .get_mut(id as usize)
                        .ok_or_else(|| Error::Protocol(format!("sparse entry for out-of-range ID {id}")))?;
                    if !slot.is_nan() {
                        return Err(Error::Protocol(format!("duplicate sparse entry for ID {id}")));
                    }
                    *slot = p;
                }
                let unlisted = vocab_size - topk.len();
                let share = if unlisted == 0 {
                    0.0
                } else {
                    rest_mass / unlisted as f64
                };
                values.iter_mut().filter(|v| v.is_nan()).for_each(|v| *v = share);
                values
            }
        };
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Protocol(format!("peer sent invalid probability {v}")));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > WIRE_MASS_TOLERANCE {
            return Err(Error::Protocol(format!("peer distribution sums to {sum}")));
        }
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return ProbVector::from_weights(values).map_err(|e| Error::Protocol(e.to_string()));
        }
        ProbVector::new(values).map_err(|e| Error::Protocol(e.to_string()))
    }
}
