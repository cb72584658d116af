//! Masked-autoencoder pretraining and noise-weighted fine-tuning.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::softmax_channels;
use super::net::ModelState;
use super::optim::{adamw_step, lr_at, Moments, TrainConfig};
use crate::eval::{Confusion, MetricReport};
use crate::labeling::LabelMode;
use crate::loss::{focus_loss, focus_loss_grad, focus_loss_multi, focus_loss_multi_grad, inverse_frequency_weights, LossBatch, MultiLossBatch};
use crate::raster::{PatchStack, RasterGrid};
use crate::{Error, Result};

/// Side length of the square blocks hidden during pretraining.
pub const MASK_BLOCK: usize = 8;

/// A featurized training patch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub size: usize,
    /// Normalized input, `C×P×P`.
    pub input: Vec<f64>,
    pub labels: Vec<u8>,
    pub noise: Vec<f64>,
    pub valid: Vec<bool>,
}

impl TrainSample {
    /// Featurizes a patch and pairs it with its label and noise masks.
    /// Valid cells are the water cells; nodata noise counts as zero confidence.
    pub fn from_patch(state: &ModelState, patch: &PatchStack, labels: &RasterGrid, noise: &RasterGrid, mode: LabelMode) -> Result<Self> {
        let water = patch.water_mask()?;
        if labels.len() != water.len() || noise.len() != water.len() {
            return Err(Error::Invalid("label or noise mask does not match the patch".into()));
        }
        let k = mode.num_classes();
        let mut out_labels = Vec::with_capacity(water.len());
        for (i, w) in water.iter().enumerate() {
            let l = labels.values[i];
            if *w && !(l >= 0.0 && (l as usize) < k) {
                return Err(Error::Invalid(format!("water cell {i} has label {l} outside {k} classes")));
            }
            out_labels.push(if *w { l as u8 } else { 0 });
        }
        let noise = noise.values.iter().map(|v| if noise.is_nodata(*v) { 0.0 } else { v.clamp(0.0, 1.0) }).collect();
        Ok(Self { size: patch.size_p, input: state.featurize(patch)?, labels: out_labels, noise, valid: water })
    }

    pub fn num_valid(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Focal loss weighted by the noise mask.
    Focus,
    /// Plain focal loss (noise mask replaced by ones).
    FocalOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    /// Mean batch loss at every optimizer step.
    pub step_losses: Vec<f64>,
    pub epochs: Vec<EpochMetrics>,
}

impl TrainLog {
    /// `epoch,split,accuracy,iou,fscore,precision,recall` with macro values.
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("epoch,split,accuracy,iou,fscore,precision,recall\n");
        for e in &self.epochs {
            let m = &e.report.macro_avg;
            s.push_str(&format!("{},{},{},{},{},{},{}\n", e.epoch, e.split, m.accuracy, m.iou, m.fscore, m.precision, m.recall));
        }
        s
    }
}

/// Hard class per cell: `p1 ≥ 0.5` for two classes, first maximum otherwise.
pub fn classify(probs: &[f64], k: usize, plane: usize) -> Vec<u8> {
    (0..plane)
        .map(|i| {
            if k == 2 {
                return (probs[plane + i] >= 0.5) as u8;
            }
            let mut best = 0;
            for c in 1..k {
                if probs[c * plane + i] > probs[best * plane + i] {
                    best = c;
                }
            }
            best as u8
        })
        .collect()
}

/// Inverse pixel frequency of each class over the valid cells.
pub fn class_weights(data: &[TrainSample], k: usize) -> Vec<f64> {
    let mut counts = vec![0usize; k];
    for s in data {
        for (l, v) in s.labels.iter().zip(&s.valid) {
            if *v {
                counts[*l as usize] += 1;
            }
        }
    }
    inverse_frequency_weights(&counts)
}

struct SampleGrad {
    loss: f64,
    grads: Vec<Vec<f64>>,
    preds: Vec<u8>,
}

fn segmentation_grad(state: &ModelState, s: &TrainSample, weights: &[f64], gamma: f64, mode: LossMode) -> Result<SampleGrad> {
    let k = state.config.num_classes;
    let plane = s.size * s.size;
    let (out, cache) = state.forward_input(&s.input, s.size)?;
    let probs = softmax_channels(&out.logits, k, plane);
    let noise = match mode {
        LossMode::Focus => s.noise.clone(),
        LossMode::FocalOnly => vec![1.0; plane],
    };
    let mut dlogits = vec![0.0; k * plane];
    let loss = if k == 2 {
        let batch = LossBatch {
            probs: probs[plane..].to_vec(),
            labels: s.labels.clone(),
            noise,
            valid: s.valid.clone(),
            class_weights: (weights[0], weights[1]),
        };
        let g = focus_loss_grad(&batch, gamma)?;
        for i in 0..plane {
            dlogits[i] = -g[i];
            dlogits[plane + i] = g[i];
        }
        focus_loss(&batch, gamma)?
    } else {
        let mut rows = vec![0.0; k * plane];
        for c in 0..k {
            for i in 0..plane {
                rows[i * k + c] = probs[c * plane + i];
            }
        }
        let batch = MultiLossBatch {
            probs: rows,
            num_classes: k,
            labels: s.labels.clone(),
            noise,
            valid: s.valid.clone(),
            class_weights: weights.to_vec(),
        };
        let g = focus_loss_multi_grad(&batch, gamma)?;
        for c in 0..k {
            for i in 0..plane {
                dlogits[c * plane + i] = g[i * k + c];
            }
        }
        focus_loss_multi(&batch, gamma)?
    };
    let mut grads = state.zero_grads();
    state.backward(&cache, Some(&dlogits), None, &mut grads);
    Ok(SampleGrad { loss, grads, preds: classify(&probs, k, plane) })
}

/// Mean of per-sample gradients, summed in batch order.
fn reduce(parts: Vec<SampleGrad>, template: &ModelState) -> (f64, Vec<Vec<f64>>) {
    let n = parts.len() as f64;
    let mut total = template.zero_grads();
    let mut loss = 0.0;
    for p in &parts {
        loss += p.loss;
        for (t, g) in total.iter_mut().zip(&p.grads) {
            for (a, b) in t.iter_mut().zip(g) {
                *a += b;
            }
        }
    }
    for t in &mut total {
        for v in t.iter_mut() {
            *v /= n;
        }
    }
    (loss / n, total)
}

fn pixel_confusion(k: usize, samples: &[&TrainSample], preds: &[Vec<u8>]) -> Confusion {
    let mut cm = Confusion::new(k);
    for (s, p) in samples.iter().zip(preds) {
        for i in 0..s.labels.len() {
            if s.valid[i] {
                cm.add(s.labels[i], p[i]);
            }
        }
    }
    cm
}

/// Pixel-level metrics of the current state over valid cells.
pub fn evaluate_pixels(state: &ModelState, data: &[TrainSample]) -> Result<MetricReport> {
    let k = state.config.num_classes;
    let preds: Vec<Vec<u8>> = data
        .par_iter()
        .map(|s| state.predict_input(&s.input, s.size).map(|p| classify(&p, k, s.size * s.size)))
        .collect::<Result<_>>()?;
    let refs: Vec<&TrainSample> = data.iter().collect();
    Ok(MetricReport::from_confusion(&pixel_confusion(k, &refs, &preds)))
}

/// Trains every parameter with the focal loss, weighted by the noise mask in
/// [`LossMode::Focus`]. Per-epoch training metrics come from the predictions
/// made during that epoch; `eval` data, when given, is scored after each epoch.
pub fn finetune(
    mut state: ModelState,
    train: &[TrainSample],
    eval: Option<&[TrainSample]>,
    config: &TrainConfig,
    mode: LossMode,
) -> Result<(ModelState, TrainLog)> {
    if train.is_empty() {
        return Err(Error::Invalid("empty training set".into()));
    }
    let k = state.config.num_classes;
    let sched = config.schedule(train.len())?;
    let weights = class_weights(train, k);
    let mut moments = Moments::zeros(&state.params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut log = TrainLog::default();
    let per_epoch = config.steps_per_epoch(train.len());
    let epochs = sched.total_steps.div_ceil(per_epoch);
    let mut step = 0;
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut seen: Vec<&TrainSample> = Vec::new();
        let mut preds = Vec::new();
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for batch in order.chunks(config.batch_size) {
            if step >= sched.total_steps {
                break;
            }
            let parts: Vec<SampleGrad> = batch
                .par_iter()
                .map(|i| segmentation_grad(&state, &train[*i], &weights, config.gamma, mode))
                .collect::<Result<_>>()?;
            for (i, p) in batch.iter().zip(&parts) {
                seen.push(&train[*i]);
                preds.push(p.preds.clone());
            }
            let (loss, grads) = reduce(parts, &state);
            if loss.is_nan() {
                return Err(Error::NanLoss(step));
            }
            adamw_step(&mut state.params, &grads, &mut moments, config, lr_at(&sched, step), step)?;
            log.step_losses.push(loss);
            epoch_loss += loss;
            batches += 1;
            step += 1;
        }
        let mean_loss = epoch_loss / batches.max(1) as f64;
        log.epochs.push(EpochMetrics {
            epoch,
            split: "train".into(),
            loss: mean_loss,
            report: MetricReport::from_confusion(&pixel_confusion(k, &seen, &preds)),
        });
        if let Some(eval) = eval.filter(|e| !e.is_empty()) {
            log.epochs.push(EpochMetrics { epoch, split: "eval".into(), loss: f64::NAN, report: evaluate_pixels(&state, eval)? });
        }
    }
    Ok((state, log))
}

/// Cells hidden by the block mask for one input: `round(ratio × blocks)`
/// square blocks chosen by the generator.
pub fn block_mask(size: usize, mask_ratio: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let nb = size.div_ceil(MASK_BLOCK);
    let mut blocks: Vec<usize> = (0..nb * nb).collect();
    let n_mask = ((mask_ratio * blocks.len() as f64).round() as usize).min(blocks.len());
    let (chosen, _) = blocks.partial_shuffle(rng, n_mask);
    let mut mask = vec![false; size * size];
    for b in chosen.iter() {
        let (by, bx) = (b / nb * MASK_BLOCK, b % nb * MASK_BLOCK);
        for y in by..(by + MASK_BLOCK).min(size) {
            for x in bx..(bx + MASK_BLOCK).min(size) {
                mask[y * size + x] = true;
            }
        }
    }
    mask
}

fn mask_rng(seed: u64, step: usize, index: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(((step as u64) << 32) | index as u64);
    r
}

/// Reconstruction loss and its gradient on the reconstruction head.
fn reconstruction(state: &ModelState, input: &[f64], size: usize, mask: &[bool]) -> Result<(f64, Option<Vec<f64>>, super::net::ForwardCache)> {
    let c = state.config.in_channels;
    let plane = size * size;
    let mut masked = input.to_vec();
    for ch in 0..c {
        for i in 0..plane {
            if mask[i] {
                masked[ch * plane + i] = 0.0;
            }
        }
    }
    let (out, cache) = state.forward_input(&masked, size)?;
    let n_masked = mask.iter().filter(|m| **m).count();
    if n_masked == 0 {
        return Ok((0.0, None, cache));
    }
    let denom = (n_masked * c) as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; c * plane];
    for ch in 0..c {
        for i in 0..plane {
            if mask[i] {
                let d = out.recon[ch * plane + i] - input[ch * plane + i];
                loss += d * d;
                grad[ch * plane + i] = 2.0 * d / denom;
            }
        }
    }
    Ok((loss / denom, Some(grad), cache))
}

/// Mean squared reconstruction error on masked cells, with masks drawn from `seed`.
pub fn masked_reconstruction_mse(state: &ModelState, inputs: &[Vec<f64>], size: usize, mask_ratio: f64, seed: u64) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::Invalid("empty dataset".into()));
    }
    let losses: Vec<f64> = inputs
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mask = block_mask(size, mask_ratio, &mut mask_rng(seed, usize::MAX >> 32, i));
            reconstruction(state, x, size, &mask).map(|r| r.0)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Masked-autoencoder pretraining on normalized inputs: random blocks are
/// zeroed and the reconstruction head is trained on the hidden cells.
/// Returns the per-step losses.
pub fn pretrain_mae(
    mut state: ModelState,
    inputs: &[Vec<f64>],
    size: usize,
    mask_ratio: f64,
    config: &TrainConfig,
) -> Result<(ModelState, Vec<f64>)> {
    if inputs.is_empty() {
        return Err(Error::Invalid("empty pretraining set".into()));
    }
    if !(0.0..1.0).contains(&mask_ratio) {
        return Err(Error::Config(format!("mask ratio {mask_ratio} outside [0, 1)")));
    }
    let sched = config.schedule(inputs.len())?;
    let mut moments = Moments::zeros(&state.params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut losses = Vec::with_capacity(sched.total_steps);
    let mut step = 0;
    while step < sched.total_steps {
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            if step >= sched.total_steps {
                break;
            }
            let parts: Vec<SampleGrad> = batch
                .par_iter()
                .map(|i| {
                    let mask = block_mask(size, mask_ratio, &mut mask_rng(config.seed, step, *i));
                    let (loss, grad, cache) = reconstruction(&state, &inputs[*i], size, &mask)?;
                    let mut grads = state.zero_grads();
                    if let Some(g) = grad {
                        state.backward(&cache, None, Some(&g), &mut grads);
                    }
                    Ok(SampleGrad { loss, grads, preds: Vec::new() })
                })
                .collect::<Result<_>>()?;
            let (loss, grads) = reduce(parts, &state);
            if loss.is_nan() {
                return Err(Error::NanLoss(step));
            }
            adamw_step(&mut state.params, &grads, &mut moments, config, lr_at(&sched, step), step)?;
            losses.push(loss);
            step += 1;
        }
    }
    Ok((state, losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ChannelStats, FeatureSpec, NetConfig};
    use rand::Rng;

    fn state(seed: u64) -> ModelState {
        let spec = FeatureSpec { distance_channels: Vec::new() };
        let c = spec.num_channels();
        ModelState::init(NetConfig::new(c, 2), spec, ChannelStats::identity(c), seed).unwrap()
    }

    fn data(n: usize, seed: u64, noise: Option<f64>) -> Vec<TrainSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let size = 16;
                let input: Vec<f64> = (0..17 * size * size).map(|_| rng.random_range(-1.0..1.0)).collect();
                let labels: Vec<u8> = (0..size * size).map(|i| (input[i] > 0.0) as u8).collect();
                let noise = (0..size * size).map(|_| noise.unwrap_or_else(|| rng.random::<f64>())).collect();
                let valid = (0..size * size).map(|i| i % 7 != 0).collect();
                TrainSample { size, input, labels, noise, valid }
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let s = state(1);
        let cfg = TrainConfig { learning_rate: 0.0, epochs: 1, ..Default::default() };
        let (after, log) = finetune(s.clone(), &data(1, 2, None), None, &cfg, LossMode::Focus).unwrap();
        assert_eq!(after.params, s.params);
        assert_eq!(log.step_losses.len(), 1);
    }

    #[test]
    fn deterministic_and_unit_mask_equivalence() {
        let cfg = TrainConfig { epochs: 2, learning_rate: 1e-3, seed: 3, ..Default::default() };
        let d = data(6, 4, None);
        let (a, la) = finetune(state(5), &d, Some(&d[..2]), &cfg, LossMode::Focus).unwrap();
        let (b, lb) = finetune(state(5), &d, Some(&d[..2]), &cfg, LossMode::Focus).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(la.step_losses, lb.step_losses);
        assert_eq!(la.metrics_csv(), lb.metrics_csv());
        assert_eq!(la.epochs.len(), 4);

        let ones = data(6, 4, Some(1.0));
        let (f, lf) = finetune(state(5), &ones, None, &cfg, LossMode::Focus).unwrap();
        let (g, lg) = finetune(state(5), &ones, None, &cfg, LossMode::FocalOnly).unwrap();
        assert_eq!(f.params, g.params);
        assert_eq!(lf.step_losses, lg.step_losses);
        assert_ne!(f.params, a.params);
    }

    #[test]
    fn training_lowers_the_loss() {
        let cfg = TrainConfig { epochs: 40, learning_rate: 3e-3, seed: 1, ..Default::default() };
        let d = data(8, 6, Some(1.0));
        let (_, log) = finetune(state(2), &d, None, &cfg, LossMode::Focus).unwrap();
        let first: f64 = log.step_losses[..2].iter().sum();
        let last: f64 = log.step_losses[log.step_losses.len() - 2..].iter().sum();
        assert!(last < 0.5 * first, "{first} → {last}");
    }

    #[test]
    fn block_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = block_mask(32, 0.5, &mut rng);
        assert_eq!(m.iter().filter(|v| **v).count(), 8 * 64);
        assert!(block_mask(32, 0.01, &mut rng).iter().all(|v| !*v));
    }

    #[test]
    fn nothing_masked_means_no_reconstruction_signal() {
        let s = state(7);
        let inputs: Vec<Vec<f64>> = data(3, 8, None).into_iter().map(|d| d.input).collect();
        let cfg = TrainConfig { epochs: 1, ..Default::default() };
        let (after, losses) = pretrain_mae(s.clone(), &inputs, 16, 0.01, &cfg).unwrap();
        assert!(losses.iter().all(|l| *l == 0.0));
        // zero gradients leave the biases untouched; decay acts on zeros
        let recon_b = after.params.iter().find(|t| t.info.name == "recon.b").unwrap();
        assert!(recon_b.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_inputs_are_learned() {
        let s = state(9);
        let inputs = vec![vec![0.7; 17 * 256]; 4];
        let before = masked_reconstruction_mse(&s, &inputs, 16, 0.5, 1).unwrap();
        let cfg = TrainConfig { epochs: 40, learning_rate: 3e-3, ..Default::default() };
        let (after, _) = pretrain_mae(s, &inputs, 16, 0.5, &cfg).unwrap();
        let later = masked_reconstruction_mse(&after, &inputs, 16, 0.5, 1).unwrap();
        assert!(later <= before, "{before} → {later}");
    }
}
