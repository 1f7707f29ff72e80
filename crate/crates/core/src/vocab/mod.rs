//! Member vocabularies, the union vocabulary and the per-member projection
//! matrices, plus tokenizer adaptation and cross-tokenizer agreement.
//!
//! Token identity across tokenizers is the decoded byte surface. A GPT-2
//! style `Ġword` and a SentencePiece `▁word` both become the bytes ` word`
//! before they reach this module, so they unify in the union.

mod file;
mod tokenizer;
mod union;

use std::borrow::Borrow;
use std::collections::{BTreeSet, HashMap};
use std::fmt;

use crate::error::{Error, Result};

pub use file::{load_vocab_file, parse_vocab, write_vocab_file, VOCAB_MAGIC};
pub use tokenizer::{agreement_rate, LongestMatchTokenizer, TokenizerAdapter};
pub use union::{build_union, MappingMatrix, UnionVocab};

/// Token ID within one member vocabulary.
pub type TokenId = u32;

/// Decoded byte surface of a token. Never empty; compared byte-for-byte.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenSurface(Vec<u8>);

impl TokenSurface {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Result<Self> {
        let bytes = bytes.into();
        if bytes.is_empty() {
            return Err(Error::Contract("token surface must be non-empty".into()));
        }
        Ok(TokenSurface(bytes))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }

    /// Lossy UTF-8 rendering for traces and logs.
    pub fn display(&self) -> String {
        String::from_utf8_lossy(&self.0).into_owned()
    }
}

impl fmt::Debug for TokenSurface {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.display())
    }
}

// Hash/Eq of the newtype match those of the byte slice.
impl Borrow<[u8]> for TokenSurface {
    fn borrow(&self) -> &[u8] {
        &self.0
    }
}

impl TryFrom<&str> for TokenSurface {
    type Error = Error;

    fn try_from(s: &str) -> Result<Self> {
        TokenSurface::new(s.as_bytes())
    }
}

/// One member's vocabulary: surfaces indexed densely by token ID.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    surfaces: Vec<TokenSurface>,
    special_ids: BTreeSet<TokenId>,
    // surface -> lowest ID carrying it
    lookup: HashMap<TokenSurface, TokenId>,
}

impl Vocabulary {
    pub fn new(surfaces: Vec<TokenSurface>, special_ids: impl IntoIterator<Item = TokenId>) -> Result<Self> {
        if surfaces.is_empty() {
            return Err(Error::Config("vocabulary must contain at least one token".into()));
        }
        if surfaces.len() > TokenId::MAX as usize {
            return Err(Error::Config("vocabulary too large for 32-bit token IDs".into()));
        }
        let special_ids: BTreeSet<TokenId> = special_ids.into_iter().collect();
        if let Some(&bad) = special_ids.iter().find(|&&id| id as usize >= surfaces.len()) {
            return Err(Error::Config(format!(
                "special ID {bad} outside vocabulary of size {}",
                surfaces.len()
            )));
        }
        let mut lookup = HashMap::with_capacity(surfaces.len());
        for (id, s) in surfaces.iter().enumerate() {
            lookup.entry(s.clone()).or_insert(id as TokenId);
        }
        Ok(Vocabulary {
            surfaces,
            special_ids,
            lookup,
        })
    }

    /// Convenience constructor from UTF-8 strings, no special tokens.
    pub fn from_strs<S: AsRef<str>>(tokens: &[S]) -> Result<Self> {
        let surfaces = tokens
            .iter()
            .map(|t| TokenSurface::new(t.as_ref().as_bytes()))
            .collect::<Result<Vec<_>>>()?;
        Vocabulary::new(surfaces, [])
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn surfaces(&self) -> &[TokenSurface] {
        &self.surfaces
    }

    pub fn surface(&self, id: TokenId) -> Option<&TokenSurface> {
        self.surfaces.get(id as usize)
    }

    pub fn special_ids(&self) -> &BTreeSet<TokenId> {
        &self.special_ids
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        self.special_ids.contains(&id)
    }

    /// Lowest ID whose surface equals `surface`.
    pub fn id_of(&self, surface: &TokenSurface) -> Option<TokenId> {
        self.lookup.get(surface).copied()
    }

    pub fn id_of_bytes(&self, bytes: &[u8]) -> Option<TokenId> {
        self.lookup.get(bytes).copied()
    }

    /// Surfaces of the control tokens, e.g. end-of-sequence.
    pub fn special_surfaces(&self) -> impl Iterator<Item = &TokenSurface> {
        self.special_ids.iter().map(|&id| &self.surfaces[id as usize])
    }

    pub fn check_ids(&self, ids: &[TokenId]) -> Result<()> {
        match ids.iter().find(|&&id| id as usize >= self.surfaces.len()) {
            Some(bad) => Err(Error::Contract(format!(
                "token ID {bad} out of range for vocabulary of size {}",
                self.surfaces.len()
            ))),
            None => Ok(()),
        }
    }
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.surfaces == other.surfaces && self.special_ids == other.special_ids
    }
}

impl Eq for Vocabulary {}
