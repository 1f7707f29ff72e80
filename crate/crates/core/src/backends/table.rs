use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Backend, PrefixModel, PrefixSession, ProbVector, Session};
use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocabulary};

/// Deterministic lookup-table backend.
///
/// Rules are keyed by a context (a token-ID sequence). A step uses the rule
/// with the longest context that is a suffix of the prefix, and the declared
/// fallback when none matches.
pub struct TableBackend {
    name: String,
    vocab: Arc<Vocabulary>,
    fallback: ProbVector,
    rules: HashMap<Vec<TokenId>, ProbVector>,
    max_context: usize,
}

/// On-disk form of a table backend (JSON).
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TableSpec {
    pub fallback: Vec<f64>,
    #[serde(default)]
    pub rules: Vec<TableRule>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TableRule {
    pub context: Vec<TokenId>,
    pub probs: Vec<f64>,
}

impl TableBackend {
    pub fn new(name: impl Into<String>, vocab: Arc<Vocabulary>, fallback: ProbVector) -> Result<Self> {
        if fallback.len() != vocab.len() {
            return Err(Error::Config(format!(
                "fallback has {} entries, vocabulary has {}",
                fallback.len(),
                vocab.len()
            )));
        }
        Ok(TableBackend {
            name: name.into(),
            vocab,
            fallback,
            rules: HashMap::new(),
            max_context: 0,
        })
    }

    /// Adds (or replaces) the distribution used after `context`.
    pub fn with_rule(mut self, context: Vec<TokenId>, probs: ProbVector) -> Result<Self> {
        self.insert_rule(context, probs)?;
        Ok(self)
    }

    pub fn insert_rule(&mut self, context: Vec<TokenId>, probs: ProbVector) -> Result<()> {
        self.vocab.check_ids(&context)?;
        if probs.len() != self.vocab.len() {
            return Err(Error::Config(format!(
                "rule for context {context:?} has {} entries, vocabulary has {}",
                probs.len(),
                self.vocab.len()
            )));
        }
        self.max_context = self.max_context.max(context.len());
        self.rules.insert(context, probs);
        Ok(())
    }

    pub fn from_spec(name: impl Into<String>, vocab: Arc<Vocabulary>, spec: TableSpec) -> Result<Self> {
        let mut table = TableBackend::new(name, vocab, ProbVector::new(spec.fallback)?)?;
        for rule in spec.rules {
            table.insert_rule(rule.context, ProbVector::new(rule.probs)?)?;
        }
        Ok(table)
    }

    pub fn load(name: impl Into<String>, vocab: Arc<Vocabulary>, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let spec: TableSpec = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.line(), e.to_string()))?;
        TableBackend::from_spec(name, vocab, spec)
    }

    pub fn rule_count(&self) -> usize {
        self.rules.len()
    }
}

impl PrefixModel for TableBackend {
    fn vocabulary(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    fn distribution(&self, prefix: &[TokenId]) -> Result<ProbVector> {
        let longest = self.max_context.min(prefix.len());
        let hit = (0..=longest)
            .rev()
            .find_map(|len| self.rules.get(&prefix[prefix.len() - len..]));
        Ok(hit.unwrap_or(&self.fallback).clone())
    }
}

impl Backend for TableBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn vocabulary(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    fn start_session(self: Arc<Self>, prompt_ids: &[TokenId]) -> Result<Box<dyn Session>> {
        Ok(Box::new(PrefixSession::new(self, prompt_ids)?))
    }
}
