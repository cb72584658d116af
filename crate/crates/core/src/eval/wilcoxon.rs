//! Wilcoxon signed-rank test for paired scores.

use serde::Serialize;

use crate::{Error, Result};

/// Largest sample size that gets the exact null distribution.
pub const EXACT_MAX_N: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WilcoxonResult {
    /// `min(W+, W−)`.
    pub statistic: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Nonzero differences that were ranked.
    pub n: usize,
    pub p_one_sided: f64,
    pub p_two_sided: f64,
    pub exact: bool,
}

/// Average ranks of `|d|`, 1-based, ties sharing the mean rank.
fn average_ranks(abs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..abs.len()).collect();
    idx.sort_by(|a, b| abs[*a].total_cmp(&abs[*b]));
    let mut ranks = vec![0.0; abs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && abs[idx[j + 1]] == abs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in &idx[i..=j] {
            ranks[*k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// `P(W+ ≤ w)` under the null, counting all `2ⁿ` sign assignments.
/// Ranks are doubled so tied half-ranks stay integral.
fn exact_cdf(ranks: &[f64], w: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut ways = vec![0.0f64; total + 1];
    ways[0] = 1.0;
    for d in &doubled {
        for s in (*d..=total).rev() {
            ways[s] += ways[s - d];
        }
    }
    let limit = (2.0 * w).round() as usize;
    let hits: f64 = ways[..=limit.min(total)].iter().sum();
    hits / 2f64.powi(ranks.len() as i32)
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Normal approximation to `P(W+ ≤ w)` with tie and continuity corrections.
fn approx_cdf(abs: &[f64], w: f64) -> f64 {
    let nf = abs.len() as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut sorted = abs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut ties = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i..].iter().take_while(|v| **v == sorted[i]).count();
        ties += (t * t * t - t) as f64;
        i += t;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
    normal_cdf((w - mean + 0.5) / var.sqrt()).min(1.0)
}

/// Paired test of `a` against `b`. Zero differences are dropped before ranking.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Invalid(format!("paired samples need equal nonzero lengths, got {} and {}", a.len(), b.len())));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.is_empty() {
        return Err(Error::Invalid("all paired differences are zero".into()));
    }
    let n = diffs.len();
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).fold(0.0, |acc, (_, r)| acc + r);
    let w_minus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d < 0.0).fold(0.0, |acc, (_, r)| acc + r);
    let w = w_plus.min(w_minus);
    let exact = n <= EXACT_MAX_N;
    let p_one = if exact { exact_cdf(&ranks, w) } else { approx_cdf(&abs, w) };
    Ok(WilcoxonResult {
        statistic: w,
        w_plus,
        w_minus,
        n,
        p_one_sided: p_one,
        p_two_sided: (2.0 * p_one).min(1.0),
        exact,
    })
}
