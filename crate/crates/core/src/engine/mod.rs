//! Lockstep ensemble generation.
//!
//! Every step, the required members produce next-token distributions over
//! their own vocabularies. These are projected onto the union vocabulary,
//! fused, and one union token is selected. Its surface is then re-encoded by
//! each member's tokenizer and appended to that member's prefix, so members
//! with different tokenizers stay aligned on the same text.
//!
//! In cascade mode only the gate member runs by default. When its
//! confidence (maximum probability) is at or below the threshold, the step
//! is either ensembled across all members or delegated to one target member.
//! Members skipped on a step still receive the appended tokens.

mod fuse;
mod select;
mod trace;

use std::collections::BTreeSet;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::{Backend, BackendDescriptor, ProbVector, Session};
use crate::error::{Error, Result};
use crate::vocab::{
    build_union, LongestMatchTokenizer, MappingMatrix, TokenId, TokenSurface, TokenizerAdapter, UnionVocab,
};

pub use fuse::fuse;
pub use select::{select_token, SamplingPolicy};
pub use trace::{trace_jsonl, GenerationResult, MemberStep, StepRecord, StopReason};

/// Whether member steps within one generation step run on parallel threads.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheduling {
    #[default]
    Concurrent,
    Sequential,
}

#[derive(Clone, Debug)]
pub struct EnsembleConfig {
    pub sampling: SamplingPolicy,
    pub max_tokens: usize,
    /// Stop surfaces on top of the members' control tokens.
    pub extra_stop: Vec<TokenSurface>,
    /// Stop on any member's control token (end-of-sequence, padding).
    pub stop_on_special: bool,
    pub seed: u64,
    pub scheduling: Scheduling,
    /// Fused entries kept per trace record.
    pub trace_top_k: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            sampling: SamplingPolicy::Greedy,
            max_tokens: 256,
            extra_stop: Vec::new(),
            stop_on_special: true,
            seed: 0,
            scheduling: Scheduling::Concurrent,
            trace_top_k: 5,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_tokens == 0 {
            return Err(Error::Config("max_tokens must be positive".into()));
        }
        self.sampling.validate()
    }
}

/// What happens on a step whose gate confidence is at or below threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy", content = "target")]
pub enum BelowPolicy {
    /// Fuse all members, gate included.
    Ensemble,
    /// Use only this member's distribution; the gate's is discarded.
    Delegate(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CascadeConfig {
    pub gate: usize,
    pub threshold: f64,
    pub below: BelowPolicy,
}

impl CascadeConfig {
    pub fn validate(&self, members: usize) -> Result<()> {
        if self.gate >= members {
            return Err(Error::Config(format!("gate index {} out of range", self.gate)));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        if let BelowPolicy::Delegate(target) = self.below {
            if target >= members {
                return Err(Error::Config(format!("delegate index {target} out of range")));
            }
            if target == self.gate {
                return Err(Error::Config("delegate target must differ from the gate".into()));
            }
        }
        Ok(())
    }
}

/// Outcome of the stop test after a token is selected.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop(StopReason),
}

/// Stop columns of the union plus the length limit.
#[derive(Clone, Debug)]
pub struct StopRules {
    columns: BTreeSet<usize>,
    max_tokens: usize,
}

impl StopRules {
    pub fn new(union: &UnionVocab, config: &EnsembleConfig) -> Self {
        let mut columns = BTreeSet::new();
        if config.stop_on_special {
            columns.extend(union.special_columns().iter().copied());
        }
        columns.extend(config.extra_stop.iter().filter_map(|s| union.column_of(s.as_bytes())));
        StopRules {
            columns,
            max_tokens: config.max_tokens,
        }
    }

    pub fn is_stop(&self, column: usize) -> bool {
        self.columns.contains(&column)
    }

    /// `generated_count` includes the token just selected.
    pub fn check(&self, column: usize, generated_count: usize) -> StopDecision {
        if self.is_stop(column) {
            StopDecision::Stop(StopReason::Eos)
        } else if generated_count >= self.max_tokens {
            StopDecision::Stop(StopReason::Length)
        } else {
            StopDecision::Continue
        }
    }
}

pub fn check_stop(column: usize, generated_count: usize, rules: &StopRules) -> StopDecision {
    rules.check(column, generated_count)
}

/// One ensemble member: a backend, its tokenizer and its descriptor.
#[derive(Clone)]
pub struct Member {
    pub descriptor: BackendDescriptor,
    pub backend: Arc<dyn Backend>,
    pub tokenizer: Arc<dyn TokenizerAdapter>,
}

impl Member {
    /// Weight 1, not a gate, longest-match tokenizer over the backend's
    /// vocabulary.
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        let tokenizer = Arc::new(LongestMatchTokenizer::new(backend.vocabulary().clone()));
        Member {
            descriptor: BackendDescriptor::new(backend.name()),
            backend,
            tokenizer,
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.descriptor.name = name.into();
        self
    }

    pub fn weight(mut self, weight: f64) -> Self {
        self.descriptor.weight = weight;
        self
    }

    pub fn gate(mut self, is_gate: bool) -> Self {
        self.descriptor.is_gate = is_gate;
        self
    }

    pub fn with_tokenizer(mut self, tokenizer: Arc<dyn TokenizerAdapter>) -> Self {
        self.tokenizer = tokenizer;
        self
    }
}

/// A fixed set of members together with their union vocabulary.
pub struct Ensemble {
    members: Vec<Member>,
    union: UnionVocab,
    matrices: Vec<MappingMatrix>,
    weights: Vec<f64>,
}

impl Ensemble {
    pub fn new(members: Vec<Member>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Config("an ensemble needs at least one member".into()));
        }
        let weights: Vec<f64> = members.iter().map(|m| m.descriptor.weight).collect();
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!(
                "weights must be finite and non-negative: {weights:?}"
            )));
        }
        if weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("member weights sum to zero".into()));
        }
        if members.iter().filter(|m| m.descriptor.is_gate).count() > 1 {
            return Err(Error::Config("at most one member may be the gate".into()));
        }
        for m in &members {
            if m.tokenizer.vocabulary() != m.backend.vocabulary().as_ref() {
                return Err(Error::Config(format!(
                    "member {}: tokenizer and backend vocabularies differ",
                    m.descriptor.name
                )));
            }
        }
        let vocabs: Vec<_> = members.iter().map(|m| m.backend.vocabulary().as_ref()).collect();
        let (union, matrices) = build_union(&vocabs)?;
        Ok(Ensemble {
            members,
            union,
            matrices,
            weights,
        })
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn union(&self) -> &UnionVocab {
        &self.union
    }

    pub fn matrices(&self) -> &[MappingMatrix] {
        &self.matrices
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Index of the member flagged as gate, if any.
    pub fn gate_index(&self) -> Option<usize> {
        self.members.iter().position(|m| m.descriptor.is_gate)
    }

    /// Full ensemble on every step.
    pub fn generate(&self, prompt: &str, config: &EnsembleConfig) -> Result<GenerationResult> {
        self.run(prompt, config, None)
    }

    /// Gate-first cascade.
    pub fn generate_cascade(
        &self,
        prompt: &str,
        config: &EnsembleConfig,
        cascade: &CascadeConfig,
    ) -> Result<GenerationResult> {
        cascade.validate(self.members.len())?;
        self.run(prompt, config, Some(cascade))
    }

    fn run(&self, prompt: &str, config: &EnsembleConfig, cascade: Option<&CascadeConfig>) -> Result<GenerationResult> {
        config.validate()?;
        let n = self.members.len();
        let stop = StopRules::new(&self.union, config);
        let concurrent = config.scheduling == Scheduling::Concurrent;

        let mut sessions: Vec<Box<dyn Session>> = Vec::with_capacity(n);
        let mut mirrors: Vec<Vec<TokenId>> = Vec::with_capacity(n);
        for m in &self.members {
            let ids = m.tokenizer.encode(prompt)?;
            sessions.push(m.backend.clone().start_session(&ids)?);
            mirrors.push(ids);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut trace: Vec<StepRecord> = Vec::new();
        let mut bytes: Vec<u8> = Vec::new();
        let loop_start = Instant::now();
        let all: Vec<usize> = (0..n).collect();

        let outcome: std::result::Result<StopReason, (usize, Error)> = loop {
            let step_start = Instant::now();
            let mut dists: Vec<Option<ProbVector>> = vec![None; n];

            let step = (|| -> std::result::Result<(ProbVector, bool), (usize, Error)> {
                match cascade {
                    None => {
                        step_members(&mut sessions, &all, concurrent, &mut dists)?;
                        Ok((self.fuse_members(&all, &dists)?, n > 1))
                    }
                    Some(c) => {
                        step_members(&mut sessions, &[c.gate], concurrent, &mut dists)?;
                        let confidence = dists[c.gate].as_ref().expect("gate stepped").max();
                        if confidence > c.threshold {
                            return Ok((self.fuse_members(&[c.gate], &dists)?, false));
                        }
                        match c.below {
                            BelowPolicy::Ensemble => {
                                let rest: Vec<usize> = (0..n).filter(|&i| i != c.gate).collect();
                                step_members(&mut sessions, &rest, concurrent, &mut dists)?;
                                Ok((self.fuse_members(&all, &dists)?, true))
                            }
                            BelowPolicy::Delegate(target) => {
                                step_members(&mut sessions, &[target], concurrent, &mut dists)?;
                                Ok((self.fuse_members(&[target], &dists)?, true))
                            }
                        }
                    }
                }
            })();
            let (q, ensembled) = match step {
                Ok(v) => v,
                Err(e) => break Err(e),
            };

            let column = select_token(&q, config.sampling, &mut rng);
            let chosen = self.union.surface(column).clone();
            let index = trace.len() + 1;
            debug!("step {index}: chose {chosen:?} (ensembled={ensembled})");

            let decision = stop.check(column, index);
            let mut record = StepRecord {
                step: index,
                members: self.member_steps(&dists),
                fused_top_k: q
                    .top_k(config.trace_top_k)
                    .into_iter()
                    .map(|(c, p)| (self.union.surface(c).clone(), p))
                    .collect(),
                chosen: chosen.clone(),
                chosen_column: column,
                ensembled,
                wall_time: Duration::ZERO,
            };

            if decision == StopDecision::Stop(StopReason::Eos) {
                record.wall_time = step_start.elapsed();
                trace.push(record);
                break Ok(StopReason::Eos);
            }
            bytes.extend_from_slice(chosen.as_bytes());

            let mut continuations = Vec::with_capacity(n);
            for (i, m) in self.members.iter().enumerate() {
                match m.tokenizer.encode_continuation(&chosen) {
                    Ok(ids) => continuations.push(ids),
                    Err(e) => {
                        record.wall_time = step_start.elapsed();
                        trace.push(record);
                        return Err(self.abort(i, e, bytes, trace, loop_start, &mirrors, prompt));
                    }
                }
            }
            for (mirror, ids) in mirrors.iter_mut().zip(&continuations) {
                mirror.extend_from_slice(ids);
            }
            if let StopDecision::Stop(reason) = decision {
                record.wall_time = step_start.elapsed();
                trace.push(record);
                break Ok(reason);
            }
            let appended = for_sessions(&mut sessions, &all, concurrent, |i, s| s.append(&continuations[i]));
            record.wall_time = step_start.elapsed();
            trace.push(record);
            if let Some((i, e)) = first_error(appended) {
                break Err((i, e));
            }
        };
        let loop_time = loop_start.elapsed();

        match outcome {
            Ok(reason) => {
                let warnings = self.divergence_warnings(prompt, &bytes, &mirrors);
                Ok(GenerationResult::assemble(bytes, trace, reason, loop_time, warnings))
            }
            Err((i, e)) => Err(self.abort(i, e, bytes, trace, loop_start, &mirrors, prompt)),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn abort(
        &self,
        member: usize,
        error: Error,
        bytes: Vec<u8>,
        trace: Vec<StepRecord>,
        loop_start: Instant,
        mirrors: &[Vec<TokenId>],
        prompt: &str,
    ) -> Error {
        let warnings = self.divergence_warnings(prompt, &bytes, mirrors);
        let partial = GenerationResult::assemble(bytes, trace, StopReason::Aborted, loop_start.elapsed(), warnings);
        Error::Generation {
            member: self.members[member].descriptor.name.clone(),
            source: Box::new(error),
            partial: Box::new(partial),
        }
    }

    /// Projects and fuses the listed members' distributions.
    fn fuse_members(
        &self,
        which: &[usize],
        dists: &[Option<ProbVector>],
    ) -> std::result::Result<ProbVector, (usize, Error)> {
        let mut mapped = Vec::with_capacity(which.len());
        let mut weights = Vec::with_capacity(which.len());
        for &i in which {
            let p = dists[i].as_ref().expect("member stepped before fusion");
            mapped.push(self.matrices[i].project(p).map_err(|e| (i, e))?);
            weights.push(if which.len() == 1 { 1.0 } else { self.weights[i] });
        }
        fuse(&mapped, &weights).map_err(|e| (which[0], e))
    }

    fn member_steps(&self, dists: &[Option<ProbVector>]) -> Vec<MemberStep> {
        dists
            .iter()
            .enumerate()
            .filter_map(|(i, d)| {
                let p = d.as_ref()?;
                let top = p.argmax();
                Some(MemberStep {
                    member: self.members[i].descriptor.name.clone(),
                    top: self.members[i].backend.vocabulary().surfaces()[top].clone(),
                    confidence: p.get(top),
                })
            })
            .collect()
    }

    fn divergence_warnings(&self, prompt: &str, bytes: &[u8], mirrors: &[Vec<TokenId>]) -> Vec<String> {
        let Ok(generated) = std::str::from_utf8(bytes) else {
            return Vec::new();
        };
        let full = format!("{prompt}{generated}");
        let mut warnings = Vec::new();
        for (m, ids) in self.members.iter().zip(mirrors) {
            match m.tokenizer.encode(&full) {
                Ok(whole) if &whole == ids => {}
                Ok(whole) => {
                    let msg = format!(
                        "member {}: incremental tokenization ({} ids) differs from whole-text tokenization ({} ids)",
                        m.descriptor.name,
                        ids.len(),
                        whole.len()
                    );
                    warn!("{msg}");
                    warnings.push(msg);
                }
                Err(e) => warnings.push(format!("member {}: cannot re-tokenize output: {e}", m.descriptor.name)),
            }
        }
        warnings
    }
}

/// Steps the listed sessions and stores their distributions in `dists`.
/// Returns the first failure in member order.
fn step_members(
    sessions: &mut [Box<dyn Session>],
    which: &[usize],
    concurrent: bool,
    dists: &mut [Option<ProbVector>],
) -> std::result::Result<(), (usize, Error)> {
    let results = for_sessions(sessions, which, concurrent, |_, s| s.step());
    let mut failure = None;
    for (i, r) in results {
        match r {
            Ok(p) => dists[i] = Some(p),
            Err(e) => {
                failure.get_or_insert((i, e));
            }
        }
    }
    failure.map_or(Ok(()), Err)
}

/// Runs `f` on each listed session, on scoped threads when `concurrent`.
/// Results come back in member order regardless of completion order.
fn for_sessions<R, F>(sessions: &mut [Box<dyn Session>], which: &[usize], concurrent: bool, f: F) -> Vec<(usize, R)>
where
    R: Send,
    F: Fn(usize, &mut dyn Session) -> R + Sync,
{
    let selected: Vec<(usize, &mut Box<dyn Session>)> = sessions
        .iter_mut()
        .enumerate()
        .filter(|(i, _)| which.contains(i))
        .collect();
    if !concurrent || selected.len() <= 1 {
        return selected.into_iter().map(|(i, s)| (i, f(i, s.as_mut()))).collect();
    }
    let f = &f;
    thread::scope(|scope| {
        let handles: Vec<_> = selected
            .into_iter()
            .map(|(i, s)| (i, scope.spawn(move || f(i, s.as_mut()))))
            .collect();
        handles
            .into_iter()
            .map(|(i, h)| (i, h.join().unwrap_or_else(|p| std::panic::resume_unwind(p))))
            .collect()
    })
}

fn first_error(results: Vec<(usize, Result<()>)>) -> Option<(usize, Error)> {
    results.into_iter().find_map(|(i, r)| r.err().map(|e| (i, e)))
}
