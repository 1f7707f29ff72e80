use std::collections::{BTreeSet, HashMap};

use super::{TokenId, TokenSurface, Vocabulary};
use crate::error::{Error, Result};
use crate::prob::ProbVector;

/// Deduplicated union of member vocabularies.
///
/// Column order is insertion order: member 0's surfaces by ID, then the
/// surfaces member 1 adds, and so on.
#[derive(Clone, Debug)]
pub struct UnionVocab {
    surfaces: Vec<TokenSurface>,
    surface_index: HashMap<TokenSurface, usize>,
    special_columns: BTreeSet<usize>,
    member_count: usize,
}

impl UnionVocab {
    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn member_count(&self) -> usize {
        self.member_count
    }

    pub fn surfaces(&self) -> &[TokenSurface] {
        &self.surfaces
    }

    pub fn surface(&self, column: usize) -> &TokenSurface {
        &self.surfaces[column]
    }

    pub fn column_of(&self, surface: &[u8]) -> Option<usize> {
        self.surface_index.get(surface).copied()
    }

    /// Columns whose surface is a control token in at least one member.
    pub fn special_columns(&self) -> &BTreeSet<usize> {
        &self.special_columns
    }

    pub fn is_special(&self, column: usize) -> bool {
        self.special_columns.contains(&column)
    }
}

/// Sparse binary projection from one member vocabulary onto the union.
///
/// Every row holds a single coefficient of 1, so the matrix is stored as
/// the target column per row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MappingMatrix {
    columns: Vec<usize>,
    n_cols: usize,
}

impl MappingMatrix {
    pub fn rows(&self) -> usize {
        self.columns.len()
    }

    pub fn cols(&self) -> usize {
        self.n_cols
    }

    /// Union column of member token `row`.
    pub fn column_of(&self, row: TokenId) -> usize {
        self.columns[row as usize]
    }

    /// Non-zero entries of a row as `(column, coefficient)` pairs.
    pub fn row(&self, row: TokenId) -> [(usize, f64); 1] {
        [(self.columns[row as usize], 1.0)]
    }

    /// `p · M`: projects a member distribution onto the union columns.
    /// Member tokens sharing a surface accumulate into one column.
    pub fn project(&self, p: &ProbVector) -> Result<ProbVector> {
        let mut out = vec![0.0; self.n_cols];
        self.accumulate_into(p, 1.0, &mut out)?;
        Ok(ProbVector::from_trusted(out))
    }

    /// Adds `scale · (p · M)` into `out`.
    pub(crate) fn accumulate_into(&self, p: &ProbVector, scale: f64, out: &mut [f64]) -> Result<()> {
        if p.len() != self.columns.len() {
            return Err(Error::Contract(format!(
                "distribution has {} entries but mapping matrix has {} rows",
                p.len(),
                self.columns.len()
            )));
        }
        if out.len() != self.n_cols {
            return Err(Error::Contract(format!(
                "output has {} columns, mapping matrix has {}",
                out.len(),
                self.n_cols
            )));
        }
        for (&col, &mass) in self.columns.iter().zip(p.values()) {
            out[col] += scale * mass;
        }
        Ok(())
    }
}

/// Builds the union vocabulary and one mapping matrix per member.
pub fn build_union(vocabs: &[&Vocabulary]) -> Result<(UnionVocab, Vec<MappingMatrix>)> {
    if vocabs.is_empty() {
        return Err(Error::Config("cannot build a union of zero vocabularies".into()));
    }
    let mut surfaces: Vec<TokenSurface> = Vec::new();
    let mut surface_index: HashMap<TokenSurface, usize> = HashMap::new();
    let mut special_columns = BTreeSet::new();
    let mut columns_per_member = Vec::with_capacity(vocabs.len());

    for (member, vocab) in vocabs.iter().enumerate() {
        if vocab.is_empty() {
            return Err(Error::Config(format!("member {member} has an empty vocabulary")));
        }
        let mut columns = Vec::with_capacity(vocab.len());
        for (id, surface) in vocab.surfaces().iter().enumerate() {
            let col = match surface_index.get(surface) {
                Some(&c) => c,
                None => {
                    let c = surfaces.len();
                    surfaces.push(surface.clone());
                    surface_index.insert(surface.clone(), c);
                    c
                }
            };
            if vocab.is_special(id as TokenId) {
                special_columns.insert(col);
            }
            columns.push(col);
        }
        columns_per_member.push(columns);
    }

    let n_cols = surfaces.len();
    let matrices = columns_per_member
        .into_iter()
        .map(|columns| MappingMatrix { columns, n_cols })
        .collect();
    let union = UnionVocab {
        surfaces,
        surface_index,
        special_columns,
        member_count: vocabs.len(),
    };
    Ok((union, matrices))
}
