use std::sync::Arc;

use super::{TokenId, TokenSurface, Vocabulary};
use crate::error::{Error, Result};

/// Text <-> token-ID conversion for one member.
pub trait TokenizerAdapter: Send + Sync {
    fn vocabulary(&self) -> &Vocabulary;

    fn encode(&self, text: &str) -> Result<Vec<TokenId>>;

    /// Concatenated surface bytes of `ids`.
    fn decode(&self, ids: &[TokenId]) -> Result<Vec<u8>> {
        let vocab = self.vocabulary();
        vocab.check_ids(ids)?;
        Ok(ids
            .iter()
            .flat_map(|&id| vocab.surfaces()[id as usize].as_bytes().iter().copied())
            .collect())
    }

    /// IDs to append after the ensemble picks `surface`. Inserts no control
    /// tokens and keeps leading bytes (e.g. a leading space) verbatim. A
    /// surface present in the vocabulary maps to its single lowest ID.
    fn encode_continuation(&self, surface: &TokenSurface) -> Result<Vec<TokenId>>;
}

/// Greedy longest-prefix-match tokenizer over a vocabulary's byte surfaces.
///
/// Control tokens only match through [`TokenizerAdapter::encode_continuation`]
/// of their exact surface, never inside running text.
#[derive(Clone, Debug)]
pub struct LongestMatchTokenizer {
    vocab: Arc<Vocabulary>,
    max_len: usize,
}

impl LongestMatchTokenizer {
    pub fn new(vocab: Arc<Vocabulary>) -> Self {
        let max_len = vocab.surfaces().iter().map(|s| s.as_bytes().len()).max().unwrap_or(1);
        LongestMatchTokenizer { vocab, max_len }
    }

    pub fn encode_bytes(&self, bytes: &[u8]) -> Result<Vec<TokenId>> {
        let mut ids = Vec::new();
        let mut pos = 0;
        while pos < bytes.len() {
            let longest = self.max_len.min(bytes.len() - pos);
            let hit = (1..=longest).rev().find_map(|len| {
                self.vocab
                    .id_of_bytes(&bytes[pos..pos + len])
                    .filter(|&id| !self.vocab.is_special(id))
                    .map(|id| (id, len))
            });
            match hit {
                Some((id, len)) => {
                    ids.push(id);
                    pos += len;
                }
                None => {
                    return Err(Error::Contract(format!(
                        "byte 0x{:02x} at offset {pos} has no token in the vocabulary",
                        bytes[pos]
                    )))
                }
            }
        }
        Ok(ids)
    }
}

impl TokenizerAdapter for LongestMatchTokenizer {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        self.encode_bytes(text.as_bytes())
    }

    fn encode_continuation(&self, surface: &TokenSurface) -> Result<Vec<TokenId>> {
        if let Some(id) = self.vocab.id_of(surface) {
            return Ok(vec![id]);
        }
        self.encode_bytes(surface.as_bytes())
    }
}

/// Fraction of `words` that both tokenizers split into the same surface
/// sequence. Each word is encoded with a leading space, as it would appear
/// mid-sentence.
pub fn agreement_rate<S: AsRef<str>>(a: &dyn TokenizerAdapter, b: &dyn TokenizerAdapter, words: &[S]) -> Result<f64> {
    if words.is_empty() {
        return Err(Error::Config("agreement rate needs at least one word".into()));
    }
    let split = |tok: &dyn TokenizerAdapter, text: &str| -> Result<Vec<TokenSurface>> {
        let vocab = tok.vocabulary();
        let ids = tok.encode(text)?;
        vocab.check_ids(&ids)?;
        Ok(ids.iter().map(|&id| vocab.surfaces()[id as usize].clone()).collect())
    };
    let mut same = 0usize;
    for word in words {
        let text = format!(" {}", word.as_ref());
        if split(a, &text)? == split(b, &text)? {
            same += 1;
        }
    }
    Ok(same as f64 / words.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok(tokens: &[&str]) -> LongestMatchTokenizer {
        LongestMatchTokenizer::new(Arc::new(Vocabulary::from_strs(tokens).unwrap()))
    }

    #[test]
    fn longest_match_and_round_trip() {
        let t = tok(&["a", "b", "ab", " ", " ab", "c"]);
        let ids = t.encode(" abcab").unwrap();
        assert_eq!(ids, vec![4, 5, 2]);
        assert_eq!(t.decode(&ids).unwrap(), b" abcab");
    }

    #[test]
    fn uncovered_byte_is_an_error() {
        let t = tok(&["a"]);
        assert!(t.encode("ab").is_err());
    }

    #[test]
    fn continuation_of_known_surface_is_single_lowest_id() {
        let t = tok(&["x", "ab", "a", "b", "ab"]);
        let s = TokenSurface::new("ab").unwrap();
        assert_eq!(t.encode_continuation(&s).unwrap(), vec![1]);
        let s = TokenSurface::new("bxa").unwrap();
        assert_eq!(t.encode_continuation(&s).unwrap(), vec![3, 0, 2]);
    }

    #[test]
    fn control_tokens_do_not_match_inside_text() {
        let vocab = Vocabulary::new(
            ["<", "/", ">", "e", "<e>"]
                .iter()
                .map(|s| TokenSurface::new(*s).unwrap())
                .collect(),
            [4],
        )
        .unwrap();
        let t = LongestMatchTokenizer::new(Arc::new(vocab));
        assert_eq!(t.encode("<e>").unwrap(), vec![0, 3, 2]);
        let eos = TokenSurface::new("<e>").unwrap();
        assert_eq!(t.encode_continuation(&eos).unwrap(), vec![4]);
    }

    #[test]
    fn agreement_of_identical_tokenizers_is_one() {
        let t = tok(&[" ", "a", "b", "c", " ab"]);
        let r = agreement_rate(&t, &t, &["ab", "ca", "b"]).unwrap();
        assert_eq!(r, 1.0);
    }

    #[test]
    fn agreement_toy_pair_is_half() {
        let split = tok(&[" ", "a", "b", "c", "d"]);
        let merged = tok(&[" ", "a", "b", "c", "d", "ab"]);
        // " ab": [" ","a","b"] vs [" ","ab"]; " cd": identical
        let words = ["ab", "cd"];
        assert_eq!(agreement_rate(&split, &merged, &words).unwrap(), 0.5);
        assert_eq!(agreement_rate(&merged, &split, &words).unwrap(), 0.5);
    }

    #[test]
    fn agreement_needs_words() {
        let t = tok(&["a"]);
        let none: [&str; 0] = [];
        assert!(matches!(agreement_rate(&t, &t, &none), Err(Error::Config(_))));
    }
}
