//! Expected calibration error.

use crate::{Error, Result};

pub const DEFAULT_BINS: usize = 10;

/// One equal-width confidence bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

/// Bin index for confidence `c`: bins are `(k/n, (k+1)/n]`, with 0 in the first.
fn bin_of(c: f64, n_bins: usize) -> usize {
    ((c * n_bins as f64).ceil() as usize).saturating_sub(1).min(n_bins - 1)
}

pub fn reliability_bins(confidences: &[f64], correct: &[bool], n_bins: usize) -> Result<Vec<CalibrationBin>> {
    if confidences.is_empty() {
        return Err(Error::Invalid("calibration needs at least one prediction".into()));
    }
    if confidences.len() != correct.len() {
        return Err(Error::Invalid(format!(
            "{} confidences but {} correctness flags",
            confidences.len(),
            correct.len()
        )));
    }
    if n_bins == 0 {
        return Err(Error::Invalid("calibration needs at least one bin".into()));
    }
    if let Some(bad) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::Invalid(format!("confidence {bad} outside [0, 1]")));
    }
    let mut sums = vec![(0usize, 0.0, 0usize); n_bins];
    for (c, ok) in confidences.iter().zip(correct) {
        let b = &mut sums[bin_of(*c, n_bins)];
        b.0 += 1;
        b.1 += c;
        b.2 += usize::from(*ok);
    }
    Ok(sums
        .iter()
        .enumerate()
        .map(|(k, (n, conf, hits))| {
            let denom = (*n).max(1) as f64;
            CalibrationBin {
                lower: k as f64 / n_bins as f64,
                upper: (k + 1) as f64 / n_bins as f64,
                count: *n,
                mean_confidence: conf / denom,
                accuracy: *hits as f64 / denom,
            }
        })
        .collect())
}

/// `Σ (bin count / total)·|bin accuracy − bin mean confidence|` over equal-width bins.
pub fn ece(confidences: &[f64], correct: &[bool], n_bins: usize) -> Result<f64> {
    let bins = reliability_bins(confidences, correct, n_bins)?;
    let total = confidences.len() as f64;
    Ok(bins.iter().map(|b| b.count as f64 / total * (b.accuracy - b.mean_confidence).abs()).sum())
}
