//! Class-weighted cross-entropy, focal loss, and the noise-weighted focal loss
//! averaged over valid (surface-water) cells.
//!
//! The focal modulation uses the true-class probability `p_t`.

use crate::{Error, Result};

/// Probabilities are clamped to `[EPS, 1 − EPS]` before taking logs.
pub const EPS: f64 = 1e-7;

#[inline]
fn clamp(p: f64) -> f64 {
    p.clamp(EPS, 1.0 - EPS)
}

/// `−w_y·[y·ln p + (1−y)·ln(1−p)]`.
pub fn weighted_ce(p: f64, y: u8, w0: f64, w1: f64) -> f64 {
    let p = clamp(p);
    if y == 1 {
        -w1 * p.ln()
    } else {
        -w0 * (1.0 - p).ln()
    }
}

/// `(1 − p_t)^γ` times the weighted cross-entropy.
pub fn focal(p: f64, y: u8, gamma: f64, w0: f64, w1: f64) -> f64 {
    let pc = clamp(p);
    let pt = if y == 1 { pc } else { 1.0 - pc };
    (1.0 - pt).powf(gamma) * weighted_ce(p, y, w0, w1)
}

/// Per-cell inputs to the binary loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBatch {
    /// Predicted probability of class 1.
    pub probs: Vec<f64>,
    pub labels: Vec<u8>,
    /// Label confidence in [0, 1].
    pub noise: Vec<f64>,
    pub valid: Vec<bool>,
    pub class_weights: (f64, f64),
}

impl LossBatch {
    fn check(&self) -> Result<usize> {
        let n = self.probs.len();
        if self.labels.len() != n || self.noise.len() != n || self.valid.len() != n {
            return Err(Error::Invalid("loss batch arrays differ in length".into()));
        }
        let valid = self.valid.iter().filter(|v| **v).count();
        if valid == 0 {
            return Err(Error::Invalid("loss batch has no valid cells".into()));
        }
        Ok(valid)
    }
}

/// `(1/N)·Σ focal·M` over the N valid cells.
pub fn focus_loss(batch: &LossBatch, gamma: f64) -> Result<f64> {
    let n = batch.check()?;
    let (w0, w1) = batch.class_weights;
    let mut sum = 0.0;
    for i in 0..batch.probs.len() {
        if batch.valid[i] {
            sum += focal(batch.probs[i], batch.labels[i], gamma, w0, w1) * batch.noise[i];
        }
    }
    Ok(sum / n as f64)
}

/// Derivative of the per-cell focal term with respect to the true-class
/// logit direction: `γ(1−p_t)^γ·p_t·ln p_t − (1−p_t)^{γ+1}`, times `w`.
#[inline]
fn focal_dz(pt: f64, gamma: f64, w: f64) -> f64 {
    let q = 1.0 - pt;
    let lead = if gamma == 0.0 { 0.0 } else { gamma * q.powf(gamma) * pt * pt.ln() };
    w * (lead - q.powf(gamma + 1.0))
}

/// ∂L/∂z per cell, where `p = σ(z)`. Zero on invalid cells and where the
/// clamp is active.
pub fn focus_loss_grad(batch: &LossBatch, gamma: f64) -> Result<Vec<f64>> {
    let n = batch.check()? as f64;
    let (w0, w1) = batch.class_weights;
    Ok((0..batch.probs.len())
        .map(|i| {
            let p = batch.probs[i];
            if !batch.valid[i] || p < EPS || p > 1.0 - EPS {
                return 0.0;
            }
            let g = if batch.labels[i] == 1 { focal_dz(p, gamma, w1) } else { -focal_dz(1.0 - p, gamma, w0) };
            g * batch.noise[i] / n
        })
        .collect())
}

/// Softmax variant for K classes: focal modulation on the true-class
/// probability, identical noise weighting and averaging.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiLossBatch {
    /// Row-major `cells × K` class probabilities.
    pub probs: Vec<f64>,
    pub num_classes: usize,
    pub labels: Vec<u8>,
    pub noise: Vec<f64>,
    pub valid: Vec<bool>,
    pub class_weights: Vec<f64>,
}

impl MultiLossBatch {
    fn check(&self) -> Result<usize> {
        let n = self.labels.len();
        if self.probs.len() != n * self.num_classes
            || self.noise.len() != n
            || self.valid.len() != n
            || self.class_weights.len() != self.num_classes
        {
            return Err(Error::Invalid("multi-class loss batch arrays differ in length".into()));
        }
        let valid = self.valid.iter().filter(|v| **v).count();
        if valid == 0 {
            return Err(Error::Invalid("loss batch has no valid cells".into()));
        }
        Ok(valid)
    }
}

pub fn focus_loss_multi(batch: &MultiLossBatch, gamma: f64) -> Result<f64> {
    let n = batch.check()?;
    let k = batch.num_classes;
    let mut sum = 0.0;
    for i in 0..batch.labels.len() {
        if batch.valid[i] {
            let y = batch.labels[i] as usize;
            let pt = clamp(batch.probs[i * k + y]);
            sum += -batch.class_weights[y] * (1.0 - pt).powf(gamma) * pt.ln() * batch.noise[i];
        }
    }
    Ok(sum / n as f64)
}

/// ∂L/∂logits, row-major `cells × K`.
pub fn focus_loss_multi_grad(batch: &MultiLossBatch, gamma: f64) -> Result<Vec<f64>> {
    let n = batch.check()? as f64;
    let k = batch.num_classes;
    let mut out = vec![0.0; batch.probs.len()];
    for i in 0..batch.labels.len() {
        let y = batch.labels[i] as usize;
        let pt = batch.probs[i * k + y];
        if !batch.valid[i] || pt < EPS || pt > 1.0 - EPS {
            continue;
        }
        // dL/dz_j = A·(δ_yj − p_j) with A the true-class derivative factor / (1 − p_t)
        let a = focal_dz(pt, gamma, batch.class_weights[y]) / (1.0 - pt);
        let scale = batch.noise[i] / n;
        for j in 0..k {
            let delta = if j == y { 1.0 } else { 0.0 };
            out[i * k + j] = a * (delta - batch.probs[i * k + j]) * scale;
        }
    }
    Ok(out)
}

/// Inverse class frequency, normalized so the weights sum to the class count.
/// Absent classes are counted once to keep the weights finite.
pub fn inverse_frequency_weights(counts: &[usize]) -> Vec<f64> {
    let inv: Vec<f64> = counts.iter().map(|c| 1.0 / (*c).max(1) as f64).collect();
    let s: f64 = inv.iter().sum();
    inv.iter().map(|v| v * counts.len() as f64 / s).collect()
}
