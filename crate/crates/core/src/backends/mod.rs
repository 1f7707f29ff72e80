//! Next-token backends.
//!
//! A backend hands out sessions. A session owns a growing token-ID prefix
//! and answers `step` with the next-token distribution over the backend's
//! own vocabulary. Results depend only on the full prefix: a session that
//! skipped `step` on earlier prefixes (cascade mode) must still answer
//! correctly, so backends may recompute from scratch.

mod delay;
mod ngram;
mod remote;
mod table;

use std::sync::Arc;

use crate::error::Result;
use crate::vocab::{TokenId, Vocabulary};

pub use crate::prob::{ProbVector, SIMPLEX_TOLERANCE};
pub use delay::{with_delay, DelayBackend};
pub use ngram::{fit_ngram, NgramBackend};
pub use remote::{RemoteBackend, RemoteSession};
pub use table::{TableBackend, TableSpec};

/// A source of next-token distributions.
pub trait Backend: Send + Sync + 'static {
    fn name(&self) -> &str;

    fn vocabulary(&self) -> &Arc<Vocabulary>;

    /// Opens a session whose prefix is `prompt_ids`.
    fn start_session(self: Arc<Self>, prompt_ids: &[TokenId]) -> Result<Box<dyn Session>>;
}

/// One generation's view of a backend.
pub trait Session: Send {
    fn prefix(&self) -> &[TokenId];

    /// Next-token distribution given the current prefix.
    fn step(&mut self) -> Result<ProbVector>;

    /// Extends the prefix. Never shrinks it.
    fn append(&mut self, ids: &[TokenId]) -> Result<()>;
}

/// A backend that is a pure function of the prefix.
pub trait PrefixModel: Send + Sync + 'static {
    fn vocabulary(&self) -> &Arc<Vocabulary>;

    fn distribution(&self, prefix: &[TokenId]) -> Result<ProbVector>;
}

/// Session over a [`PrefixModel`]: holds the prefix and nothing else.
pub struct PrefixSession<M: PrefixModel + ?Sized> {
    model: Arc<M>,
    prefix: Vec<TokenId>,
}

impl<M: PrefixModel + ?Sized> PrefixSession<M> {
    pub fn new(model: Arc<M>, prompt_ids: &[TokenId]) -> Result<Self> {
        model.vocabulary().check_ids(prompt_ids)?;
        Ok(PrefixSession {
            model,
            prefix: prompt_ids.to_vec(),
        })
    }
}

impl<M: PrefixModel + ?Sized> Session for PrefixSession<M> {
    fn prefix(&self) -> &[TokenId] {
        &self.prefix
    }

    fn step(&mut self) -> Result<ProbVector> {
        self.model.distribution(&self.prefix)
    }

    fn append(&mut self, ids: &[TokenId]) -> Result<()> {
        self.model.vocabulary().check_ids(ids)?;
        self.prefix.extend_from_slice(ids);
        Ok(())
    }
}

/// How a backend takes part in an ensemble.
#[derive(Clone, Debug, PartialEq)]
pub struct BackendDescriptor {
    pub name: String,
    /// Ensemble weight; must be non-negative.
    pub weight: f64,
    /// Whether this member's confidence gates cascade decisions.
    pub is_gate: bool,
}

impl BackendDescriptor {
    pub fn new(name: impl Into<String>) -> Self {
        BackendDescriptor {
            name: name.into(),
            weight: 1.0,
            is_gate: false,
        }
    }

    pub fn weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn gate(mut self, is_gate: bool) -> Self {
        self.is_gate = is_gate;
        self
    }
}

/// Greedy decode straight from one backend, bypassing the union: step,
/// take the lowest-ID argmax, append it. Stops after `max_tokens` or on a
/// special token (which is not returned).
pub fn native_greedy(backend: Arc<dyn Backend>, prompt_ids: &[TokenId], max_tokens: usize) -> Result<Vec<TokenId>> {
    let vocab = backend.vocabulary().clone();
    let mut session = backend.start_session(prompt_ids)?;
    let mut out = Vec::new();
    while out.len() < max_tokens {
        let id = session.step()?.argmax() as TokenId;
        if vocab.is_special(id) {
            break;
        }
        out.push(id);
        session.append(&[id])?;
    }
    Ok(out)
}
