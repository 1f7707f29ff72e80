//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::Arc;

use gac_core::backends::{Backend, TableBackend};
use gac_core::calibration::PredictionRecord;
use gac_core::{ProbVector, TokenId, TokenSurface, Vocabulary};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn vocab(tokens: &[&str], special: &[TokenId]) -> Arc<Vocabulary> {
    let surfaces = tokens.iter().map(|t| TokenSurface::new(*t).unwrap()).collect();
    Arc::new(Vocabulary::new(surfaces, special.iter().copied()).unwrap())
}

pub fn pv(v: &[f64]) -> ProbVector {
    ProbVector::new(v.to_vec()).unwrap()
}

pub fn table(name: &str, v: Arc<Vocabulary>, fallback: &[f64], rules: &[(&[TokenId], &[f64])]) -> Arc<dyn Backend> {
    let mut t = TableBackend::new(name, v, pv(fallback)).unwrap();
    for (ctx, p) in rules {
        t.insert_rule(ctx.to_vec(), pv(p)).unwrap();
    }
    Arc::new(t)
}

/// Random distribution of length `n`; roughly a quarter of entries are
/// zero, but never all of them.
pub fn random_dist<R: Rng>(rng: &mut R, n: usize) -> ProbVector {
    let mut w: Vec<f64> = (0..n)
        .map(|_| {
            if rng.gen_bool(0.25) {
                0.0
            } else {
                rng.gen_range(0.0..1.0)
            }
        })
        .collect();
    if w.iter().all(|x| *x == 0.0) {
        let i = rng.gen_range(0..n);
        w[i] = 1.0;
    }
    ProbVector::from_weights(w).unwrap()
}

fn pool_surface(i: usize) -> String {
    // mix of plain, space-led and multi-byte surfaces
    match i % 3 {
        0 => format!("t{i}"),
        1 => format!(" w{i}"),
        _ => format!("é{i}"),
    }
}

/// Two vocabularies of the given sizes sharing `round(overlap * min)`
/// surfaces, in shuffled order.
pub fn vocab_pair<R: Rng>(rng: &mut R, size_a: usize, size_b: usize, overlap: f64) -> (Vocabulary, Vocabulary) {
    let shared = (overlap * size_a.min(size_b) as f64).round() as usize;
    let mut next = 0usize;
    let mut fresh = |count: usize| -> Vec<String> {
        let out = (next..next + count).map(pool_surface).collect();
        next += count;
        out
    };
    let common = fresh(shared);
    let mut a = common.clone();
    a.extend(fresh(size_a - shared));
    let mut b = common;
    b.extend(fresh(size_b - shared));
    a.shuffle(rng);
    b.shuffle(rng);
    (Vocabulary::from_strs(&a).unwrap(), Vocabulary::from_strs(&b).unwrap())
}

/// Vocabulary with distinct surfaces and token 0 as an end marker.
pub fn random_vocab<R: Rng>(rng: &mut R, size: usize) -> Arc<Vocabulary> {
    let mut tokens: Vec<String> = (0..size - 1).map(pool_surface).collect();
    tokens.shuffle(rng);
    tokens.insert(0, "</s>".to_string());
    let surfaces = tokens.into_iter().map(|t| TokenSurface::new(t).unwrap()).collect();
    Arc::new(Vocabulary::new(surfaces, [0]).unwrap())
}

/// Table backend with random rules on contexts of length 1 and 2.
pub fn random_table<R: Rng>(rng: &mut R, name: &str, vocab: Arc<Vocabulary>, rules: usize) -> TableBackend {
    let n = vocab.len();
    let mut t = TableBackend::new(name, vocab, random_dist(rng, n)).unwrap();
    for _ in 0..rules {
        let len = rng.gen_range(1..=2);
        let ctx: Vec<TokenId> = (0..len).map(|_| rng.gen_range(1..n as TokenId)).collect();
        let p = random_dist(rng, n);
        t.insert_rule(ctx, p).unwrap();
    }
    t
}

/// Per-surface accumulation of `p` into the given union surfaces.
pub fn oracle_project(vocab: &Vocabulary, p: &ProbVector, union: &[TokenSurface]) -> Vec<f64> {
    let mut mass: HashMap<&[u8], f64> = HashMap::new();
    for (s, v) in vocab.surfaces().iter().zip(p.values()) {
        *mass.entry(s.as_bytes()).or_insert(0.0) += v;
    }
    union
        .iter()
        .map(|s| mass.get(s.as_bytes()).copied().unwrap_or(0.0))
        .collect()
}

/// Weighted per-surface mixture of member distributions.
pub fn oracle_fuse(members: &[(&Vocabulary, &ProbVector, f64)], union: &[TokenSurface]) -> Vec<f64> {
    let total: f64 = members.iter().map(|m| m.2).sum();
    let mut out = vec![0.0; union.len()];
    for (vocab, p, w) in members {
        for (o, v) in out.iter_mut().zip(oracle_project(vocab, p, union)) {
            *o += w * v / total;
        }
    }
    out
}

/// ECE by scanning every bin's edges directly.
pub fn oracle_ece(records: &[PredictionRecord], bins: usize) -> f64 {
    let b = bins as f64;
    let n = records.len() as f64;
    let mut ece = 0.0;
    for j in 1..=bins {
        let lo = (j - 1) as f64 / b;
        let hi = j as f64 / b;
        let members: Vec<&PredictionRecord> = records
            .iter()
            .filter(|r| (r.confidence > lo && r.confidence <= hi) || (j == 1 && r.confidence == 0.0))
            .collect();
        if members.is_empty() {
            continue;
        }
        let k = members.len() as f64;
        let acc = members.iter().filter(|r| r.correct).count() as f64 / k;
        let conf = members.iter().map(|r| r.confidence).sum::<f64>() / k;
        ece += k / n * (acc - conf).abs();
    }
    ece
}

/// Gate whose top-token confidence runs 0.9, 0.3, 0.9, 0.3 along its own
/// greedy path, and a second member that always prefers `c`.
pub fn alternating_pair() -> (Arc<dyn Backend>, Arc<dyn Backend>) {
    let v = vocab(&["a", "b", "c", "d"], &[]);
    let gate = table(
        "gate",
        v.clone(),
        &[0.9, 0.05, 0.03, 0.02],
        &[
            (&[0], &[0.1, 0.3, 0.3, 0.3]),
            (&[2], &[0.05, 0.02, 0.03, 0.9]),
            (&[3], &[0.3, 0.25, 0.25, 0.2]),
        ],
    );
    let other = table("other", v, &[0.05, 0.05, 0.85, 0.05], &[]);
    (gate, other)
}

/// Ten-token cycle `c0 -> c1 -> ... -> c9 -> c0`. Every step is taken with
/// confidence 0.9 except the one that opens each cycle, which has `low`.
pub fn cycle_table(name: &str, low: f64) -> Arc<dyn Backend> {
    let names: Vec<String> = (0..10).map(|i| format!("c{i}")).collect();
    let v = Arc::new(Vocabulary::from_strs(&names).unwrap());
    let peaked =
        |top: usize, p: f64| -> Vec<f64> { (0..10).map(|i| if i == top { p } else { (1.0 - p) / 9.0 }).collect() };
    let mut t = TableBackend::new(name, v, ProbVector::from_weights(peaked(0, low)).unwrap()).unwrap();
    for i in 0..10u32 {
        let next = (i as usize + 1) % 10;
        let conf = if next == 0 { low } else { 0.9 };
        t.insert_rule(vec![i], ProbVector::from_weights(peaked(next, conf)).unwrap())
            .unwrap();
    }
    Arc::new(t)
}

/// Same vocabulary as [`cycle_table`], but constant.
pub fn cycle_follower(name: &str) -> Arc<dyn Backend> {
    let names: Vec<String> = (0..10).map(|i| format!("c{i}")).collect();
    let v = Arc::new(Vocabulary::from_strs(&names).unwrap());
    Arc::new(TableBackend::new(name, v, ProbVector::uniform(10)).unwrap())
}
