//! AdamW with bias correction and the linear-warmup / polynomial-decay schedule.

use serde::{Deserialize, Serialize};

use super::net::Tensor;
use crate::{Error, Result};

/// Optimizer, schedule and loss hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    /// Defaults to a tenth of the total steps.
    pub warmup_steps: Option<usize>,
    /// Defaults to `epochs × ceil(n / batch_size)`.
    pub total_steps: Option<usize>,
    pub poly_power: f64,
    pub gamma: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            batch_size: 4,
            betas: (0.9, 0.999),
            eps: 1e-8,
            weight_decay: 0.01,
            warmup_steps: None,
            total_steps: None,
            poly_power: 1.0,
            gamma: 2.0,
            epochs: 30,
            seed: 0,
        }
    }
}

/// Learning-rate schedule with concrete step counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub poly_power: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("learning rate must be ≥ 0, batch size and epochs ≥ 1".into()));
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) || self.eps <= 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Config("betas must lie in [0, 1), eps > 0, weight decay ≥ 0".into()));
        }
        if self.gamma < 0.0 {
            return Err(Error::Config("focal gamma must be ≥ 0".into()));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }

    /// Resolves step counts for a dataset of `n` items.
    pub fn schedule(&self, n: usize) -> Result<Schedule> {
        self.validate()?;
        let total = self.total_steps.unwrap_or(self.epochs * self.steps_per_epoch(n));
        if total == 0 {
            return Err(Error::Config("total steps must be ≥ 1".into()));
        }
        let warmup = match self.warmup_steps {
            Some(w) if w >= total && w > 0 => {
                return Err(Error::Config(format!("warmup steps {w} must be below total steps {total}")))
            }
            Some(w) => w,
            None if total >= 2 => (total / 10).clamp(1, total - 1),
            None => 0,
        };
        Ok(Schedule { learning_rate: self.learning_rate, warmup_steps: warmup, total_steps: total, poly_power: self.poly_power })
    }
}

/// Linear warmup to the base rate, then polynomial decay to zero at `total_steps`.
pub fn lr_at(s: &Schedule, step: usize) -> f64 {
    if step < s.warmup_steps {
        return s.learning_rate * (step + 1) as f64 / s.warmup_steps as f64;
    }
    let span = (s.total_steps - s.warmup_steps) as f64;
    let frac = ((step - s.warmup_steps) as f64 / span).min(1.0);
    s.learning_rate * (1.0 - frac).powf(s.poly_power)
}

/// First and second moment estimates, one buffer per tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Moments {
    pub fn zeros(params: &[Tensor]) -> Self {
        let z: Vec<Vec<f64>> = params.iter().map(|t| vec![0.0; t.data.len()]).collect();
        Self { m: z.clone(), v: z }
    }
}

/// One decoupled-weight-decay Adam update at 0-based `step` with rate `lr`.
///
/// Nothing is modified when any gradient entry is non-finite.
pub fn adamw_step(
    params: &mut [Tensor],
    grads: &[Vec<f64>],
    moments: &mut Moments,
    config: &TrainConfig,
    lr: f64,
    step: usize,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::Invalid("gradient list does not match the parameters".into()));
    }
    for (t, g) in params.iter().zip(grads) {
        if g.len() != t.data.len() {
            return Err(Error::Invalid(format!("gradient for `{}` has the wrong length", t.info.name)));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(t.info.name.clone()));
        }
    }
    let (b1, b2) = config.betas;
    let t = (step + 1) as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, tensor) in params.iter_mut().enumerate() {
        let (m, v, g) = (&mut moments.m[i], &mut moments.v[i], &grads[i]);
        for j in 0..tensor.data.len() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let update = (m[j] / c1) / ((v[j] / c2).sqrt() + config.eps);
            let p = &mut tensor.data[j];
            *p = *p * (1.0 - lr * config.weight_decay) - lr * update;
        }
    }
    Ok(())
}
