//! Token-level ensembling of heterogeneous next-token generators.
//!
//! Members with different vocabularies are aligned through a union
//! vocabulary keyed by token byte surfaces. At every step their
//! next-token distributions are projected onto the union, fused, and the
//! chosen token is re-tokenized for each member. A cascade mode consults a
//! single gate member and only ensembles (or delegates) on low-confidence
//! steps.

pub mod backends;
pub mod calibration;
pub mod engine;
pub mod error;
pub mod harness;
mod prob;
pub mod stepserver;
pub mod vocab;

pub use backends::{Backend, ProbVector, Session};
pub use engine::{
    BelowPolicy, CascadeConfig, Ensemble, EnsembleConfig, GenerationResult, Member, SamplingPolicy, Scheduling,
};
pub use error::{Error, Result};
pub use vocab::{TokenId, TokenSurface, Vocabulary};
