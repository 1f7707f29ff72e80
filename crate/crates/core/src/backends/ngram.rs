use std::collections::HashMap;
use std::sync::Arc;

use super::{Backend, PrefixModel, PrefixSession, ProbVector, Session};
use crate::error::{Error, Result};
use crate::vocab::{LongestMatchTokenizer, TokenId, Vocabulary};

#[derive(Default)]
struct ContextCounts {
    total: u64,
    next: HashMap<TokenId, u64>,
}

/// Additively smoothed n-gram model over a fixed vocabulary.
///
/// `P(t | c) = (count(c, t) + alpha) / (count(c) + alpha * |V|)` where `c` is
/// the last `order` tokens of the prefix. Prefixes shorter than `order` use
/// the whole prefix as context (the empty context holds unigram counts).
/// Contexts never seen in the corpus give the uniform distribution.
pub struct NgramBackend {
    name: String,
    vocab: Arc<Vocabulary>,
    order: usize,
    alpha: f64,
    counts: HashMap<Vec<TokenId>, ContextCounts>,
}

/// Fits an n-gram model on `corpus`, tokenized by longest match over `vocab`.
pub fn fit_ngram(
    name: impl Into<String>,
    corpus: &str,
    order: usize,
    alpha: f64,
    vocab: Arc<Vocabulary>,
) -> Result<NgramBackend> {
    if corpus.is_empty() {
        return Err(Error::Config("n-gram corpus is empty".into()));
    }
    if order == 0 {
        return Err(Error::Config("n-gram order must be at least 1".into()));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::Config(format!(
            "smoothing alpha must be positive and finite, got {alpha}"
        )));
    }
    let tokens = LongestMatchTokenizer::new(vocab.clone())
        .encode_bytes(corpus.as_bytes())
        .map_err(|e| Error::Config(format!("corpus not tokenizable: {e}")))?;

    let mut counts: HashMap<Vec<TokenId>, ContextCounts> = HashMap::new();
    for (pos, &token) in tokens.iter().enumerate() {
        for len in 0..=order.min(pos) {
            let entry = counts.entry(tokens[pos - len..pos].to_vec()).or_default();
            entry.total += 1;
            *entry.next.entry(token).or_default() += 1;
        }
    }
    Ok(NgramBackend {
        name: name.into(),
        vocab,
        order,
        alpha,
        counts,
    })
}

impl NgramBackend {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

impl PrefixModel for NgramBackend {
    fn vocabulary(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    fn distribution(&self, prefix: &[TokenId]) -> Result<ProbVector> {
        let size = self.vocab.len();
        let len = self.order.min(prefix.len());
        let context = &prefix[prefix.len() - len..];
        let Some(seen) = self.counts.get(context) else {
            return Ok(ProbVector::uniform(size));
        };
        let denom = seen.total as f64 + self.alpha * size as f64;
        let mut probs = vec![self.alpha / denom; size];
        for (&token, &c) in &seen.next {
            probs[token as usize] = (c as f64 + self.alpha) / denom;
        }
        Ok(ProbVector::from_trusted(probs))
    }
}

impl Backend for NgramBackend {
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
