//! Expected Calibration Error over (confidence, correct) records.
//!
//! Bins are equal-width and right-closed over (0, 1]: bin `j` (1-based) of
//! `B` holds confidences in `((j-1)/B, j/B]`, and a confidence of exactly 0
//! goes to bin 1. ECE is the count-weighted mean absolute gap between each
//! bin's accuracy and its mean confidence; empty bins contribute nothing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub confidence: f64,
    pub correct: bool,
}

impl PredictionRecord {
    pub fn new(confidence: f64, correct: bool) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::Contract(format!("confidence {confidence} outside [0, 1]")));
        }
        Ok(PredictionRecord { confidence, correct })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// 0 for an empty bin.
    pub mean_confidence: f64,
    /// 0 for an empty bin.
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub bins: Vec<CalibrationBin>,
    pub ece: f64,
    pub records: usize,
}

impl CalibrationReport {
    pub fn summary(&self) -> String {
        let mut out = format!("ECE {:.6} over {} records\n", self.ece, self.records);
        out.push_str("   bin            count  conf    acc\n");
        for b in self.bins.iter().filter(|b| b.count > 0) {
            out.push_str(&format!(
                "  ({:.2}, {:.2}]  {:>6}  {:.4}  {:.4}\n",
                b.lower, b.upper, b.count, b.mean_confidence, b.accuracy
            ));
        }
        out
    }
}

/// 0-based bin index for `confidence`.
fn bin_index(confidence: f64, bins: usize) -> usize {
    let b = bins as f64;
    // ceil(c * B) can land one off when c * B rounds across an integer;
    // compare against the exact edges (j / B) to settle it.
    let mut j = (confidence * b).ceil().clamp(1.0, b) as usize;
    if j > 1 && confidence <= (j - 1) as f64 / b {
        j -= 1;
    } else if j < bins && confidence > j as f64 / b {
        j += 1;
    }
    j - 1
}

pub fn compute_ece(records: &[PredictionRecord], bins: usize) -> Result<CalibrationReport> {
    if records.is_empty() {
        return Err(Error::Config("ECE needs at least one record".into()));
    }
    if bins == 0 {
        return Err(Error::Config("ECE needs at least one bin".into()));
    }
    if let Some(r) = records.iter().find(|r| !(0.0..=1.0).contains(&r.confidence)) {
        return Err(Error::Contract(format!("confidence {} outside [0, 1]", r.confidence)));
    }

    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0f64; bins];
    let mut correct = vec![0usize; bins];
    for r in records {
        let j = bin_index(r.confidence, bins);
        count[j] += 1;
        conf_sum[j] += r.confidence;
        correct[j] += usize::from(r.correct);
    }

    let total = records.len() as f64;
    let mut ece = 0.0;
    let bins_out = (0..bins)
        .map(|j| {
            let (mean_confidence, accuracy) = if count[j] == 0 {
                (0.0, 0.0)
            } else {
                let n = count[j] as f64;
                (conf_sum[j] / n, correct[j] as f64 / n)
            };
            if count[j] > 0 {
                ece += count[j] as f64 / total * (accuracy - mean_confidence).abs();
            }
            CalibrationBin {
                lower: j as f64 / bins as f64,
                upper: (j + 1) as f64 / bins as f64,
                count: count[j],
                mean_confidence,
                accuracy,
            }
        })
        .collect();
    Ok(CalibrationReport {
        bins: bins_out,
        ece: ece.clamp(0.0, 1.0),
        records: records.len(),
    })
}
