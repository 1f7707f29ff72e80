mod common;

use common::{oracle_ece, rng};
use gac_core::calibration::{compute_ece, PredictionRecord, DEFAULT_BINS};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn records() -> impl Strategy<Value = Vec<PredictionRecord>> {
    let confidence = prop_oneof![
        3 => 0.0f64..=1.0,
        // bin edges and their neighbours
        1 => (0u32..=20).prop_map(|k| k as f64 / 20.0),
        1 => (1u32..=10).prop_map(|k| f64::from_bits((k as f64 / 10.0).to_bits() + 1).min(1.0)),
    ];
    prop::collection::vec((confidence, any::<bool>()), 1..300).prop_map(|v| {
        v.into_iter()
            .map(|(c, ok)| PredictionRecord::new(c, ok).unwrap())
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matches_binning_oracle(recs in records(), bins in 1usize..=25) {
        let report = compute_ece(&recs, bins).unwrap();
        let expect = oracle_ece(&recs, bins);
        prop_assert!((report.ece - expect).abs() <= 1e-12, "{} vs {expect}", report.ece);
        prop_assert_eq!(report.bins.iter().map(|b| b.count).sum::<usize>(), recs.len());
    }

    #[test]
    fn invariant_under_record_order(recs in records(), seed in any::<u64>()) {
        let mut shuffled = recs.clone();
        shuffled.shuffle(&mut rng(seed));
        let a = compute_ece(&recs, DEFAULT_BINS).unwrap().ece;
        let b = compute_ece(&shuffled, DEFAULT_BINS).unwrap().ece;
        prop_assert!((a - b).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }
}

#[test]
fn two_record_hand_case() {
    let recs = [
        PredictionRecord::new(0.8, true).unwrap(),
        PredictionRecord::new(0.6, false).unwrap(),
    ];
    let report = compute_ece(&recs, 10).unwrap();
    assert!((report.ece - 0.4).abs() <= 1e-15, "{}", report.ece);
}

#[test]
fn calibrated_sample_has_small_error() {
    let mut r = rng(7);
    let recs: Vec<PredictionRecord> = (0..10_000)
        .map(|_| {
            let c: f64 = r.gen_range(0.0..=1.0);
            PredictionRecord::new(c, r.gen_bool(c)).unwrap()
        })
        .collect();
    let ece = compute_ece(&recs, DEFAULT_BINS).unwrap().ece;
    assert!(ece <= 0.02, "{ece}");
}

#[test]
fn always_wrong_at_full_confidence_is_one() {
    let recs = vec![PredictionRecord::new(1.0, false).unwrap(); 5];
    assert_eq!(compute_ece(&recs, 10).unwrap().ece, 1.0);
}

#[test]
fn rejects_bad_input() {
    assert!(compute_ece(&[], 10).is_err());
    assert!(compute_ece(&[PredictionRecord::new(0.5, true).unwrap()], 0).is_err());
    assert!(PredictionRecord::new(1.5, true).is_err());
    assert!(PredictionRecord::new(f64::NAN, true).is_err());
}
