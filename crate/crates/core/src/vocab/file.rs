//! Portable vocabulary file.
//!
//! ```text
//! #gac-vocab v1 size=3 special=2
//! 0\tYQ==
//! 1\tIGI=
//! 2\tPC9zPg==
//! ```
//!
//! One line per ID, in order, surface bytes in standard base64.

use std::fmt::Write as _;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;

use super::{TokenId, TokenSurface, Vocabulary};
use crate::error::{Error, Result};

pub const VOCAB_MAGIC: &str = "#gac-vocab v1";

pub fn load_vocab_file(path: impl AsRef<Path>) -> Result<Vocabulary> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_vocab(&text, &path.display().to_string())
}

/// Parses a vocab file body. `source_name` labels parse errors.
pub fn parse_vocab(text: &str, source_name: &str) -> Result<Vocabulary> {
    let err = |line: usize, msg: String| Error::parse(source_name, line, msg);
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (_, header) = lines.next().ok_or_else(|| err(1, "empty vocab file".into()))?;
    let rest = header
        .strip_prefix(VOCAB_MAGIC)
        .ok_or_else(|| err(1, format!("header must start with `{VOCAB_MAGIC}`")))?;
    let mut size: Option<usize> = None;
    let mut special: Option<Vec<TokenId>> = None;
    for field in rest.split_whitespace() {
        match field.split_once('=') {
            Some(("size", v)) => {
                size = Some(v.parse().map_err(|_| err(1, format!("bad size `{v}`")))?);
            }
            Some(("special", v)) => {
                let ids = v
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<TokenId>()
                            .map_err(|_| err(1, format!("bad special ID `{s}`")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                special = Some(ids);
            }
            _ => return Err(err(1, format!("unknown header field `{field}`"))),
        }
    }
    let size = size.ok_or_else(|| err(1, "header lacks size=".into()))?;
    if size == 0 {
        return Err(err(1, "vocabulary size is zero".into()));
    }

    let mut surfaces = Vec::with_capacity(size);
    for (lineno, line) in lines {
        if line.is_empty() {
            return Err(err(lineno, "blank line".into()));
        }
        let (id, encoded) = line
            .split_once('\t')
            .ok_or_else(|| err(lineno, "expected `<id>\\t<base64>`".into()))?;
        let id: usize = id.parse().map_err(|_| err(lineno, format!("bad token ID `{id}`")))?;
        if id != surfaces.len() {
            return Err(err(
                lineno,
                format!(
                    "expected ID {}, found {id} (IDs must be dense and ascending)",
                    surfaces.len()
                ),
            ));
        }
        let bytes = STANDARD
            .decode(encoded)
            .map_err(|e| err(lineno, format!("bad base64 surface: {e}")))?;
        let surface = TokenSurface::new(bytes).map_err(|_| err(lineno, "empty surface".into()))?;
        surfaces.push(surface);
    }
    if surfaces.len() != size {
        return Err(err(
            text.lines().count().max(1),
            format!("header declares {size} tokens, found {}", surfaces.len()),
        ));
    }
    Vocabulary::new(surfaces, special.unwrap_or_default()).map_err(|e| err(1, e.to_string()))
}

/// Serializes in the portable format. Parsing the output reproduces `vocab`.
pub fn write_vocab_file(vocab: &Vocabulary) -> String {
    let special = vocab
        .special_ids()
        .iter()
        .map(|id| id.to_string())
        .collect::<Vec<_>>()
        .join(",");
    let mut out = format!("{VOCAB_MAGIC} size={} special={special}\n", vocab.len());
    for (id, s) in vocab.surfaces().iter().enumerate() {
        let _ = writeln!(out, "{id}\t{}", STANDARD.encode(s.as_bytes()));
    }
    out
}
