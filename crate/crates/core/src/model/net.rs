//! Four-stage convolutional encoder-decoder with skip connections, a
//! segmentation head and a reconstruction head.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::features::{ChannelStats, FeatureSpec};
use super::layers::*;
use crate::raster::PatchStack;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"FCK1";

/// Spatial sizes must be divisible by this (three 2× poolings).
pub const SIZE_MULTIPLE: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub in_channels: usize,
    pub widths: [usize; 4],
    pub num_classes: usize,
}

impl NetConfig {
    pub fn new(in_channels: usize, num_classes: usize) -> Self {
        Self { in_channels, widths: [8, 16, 32, 64], num_classes }
    }

    /// `(name, kernel, cin, cout)` for every layer in declaration order.
    fn layers(&self) -> Vec<(&'static str, usize, usize, usize)> {
        let [w0, w1, w2, w3] = self.widths;
        vec![
            ("enc1", 3, self.in_channels, w0),
            ("enc2", 3, w0, w1),
            ("enc3", 3, w1, w2),
            ("enc4a", 3, w2, w3),
            ("enc4b", 3, w3, w3),
            ("dec3", 3, w3 + w2, w2),
            ("dec2", 3, w2 + w1, w1),
            ("dec1", 3, w1 + w0, w0),
            ("seg", 1, w0, self.num_classes),
            ("recon", 1, w0, self.in_channels),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub info: TensorInfo,
    pub data: Vec<f64>,
}

/// Network parameters plus everything needed to featurize a patch.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: NetConfig,
    pub features: FeatureSpec,
    pub stats: ChannelStats,
    pub seed: u64,
    pub params: Vec<Tensor>,
}

const ENC1: usize = 0;
const ENC2: usize = 1;
const ENC3: usize = 2;
const ENC4A: usize = 3;
const ENC4B: usize = 4;
const DEC3: usize = 5;
const DEC2: usize = 6;
const DEC1: usize = 7;
const SEG: usize = 8;
const RECON: usize = 9;

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    size: usize,
    input: Vec<f64>,
    a1: Vec<f64>,
    p1: Vec<f64>,
    a2: Vec<f64>,
    p2: Vec<f64>,
    a3: Vec<f64>,
    p3: Vec<f64>,
    a4a: Vec<f64>,
    a4b: Vec<f64>,
    c3: Vec<f64>,
    d3: Vec<f64>,
    c2: Vec<f64>,
    d2: Vec<f64>,
    c1: Vec<f64>,
    d1: Vec<f64>,
}

impl ForwardCache {
    pub fn size(&self) -> usize {
        self.size
    }
}

/// Head outputs for one patch, channel-major.
#[derive(Debug, Clone)]
pub struct Outputs {
    pub logits: Vec<f64>,
    pub recon: Vec<f64>,
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

impl ModelState {
    /// He-normal weights and zero biases drawn from a ChaCha stream seeded by `seed`.
    pub fn init(config: NetConfig, features: FeatureSpec, stats: ChannelStats, seed: u64) -> Result<Self> {
        if features.num_channels() != config.in_channels || stats.mean.len() != config.in_channels {
            return Err(Error::Config(format!(
                "network expects {} input channels, features give {} and statistics {}",
                config.in_channels,
                features.num_channels(),
                stats.mean.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for (name, k, cin, cout) in config.layers() {
            let fan_in = (cin * k * k) as f64;
            let scale = (2.0 / fan_in).sqrt();
            let n = cout * cin * k * k;
            let w: Vec<f64> = (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * scale
                })
                .collect();
            params.push(Tensor { info: TensorInfo { name: format!("{name}.w"), shape: vec![cout, cin, k, k] }, data: w });
            params.push(Tensor { info: TensorInfo { name: format!("{name}.b"), shape: vec![cout] }, data: vec![0.0; cout] });
        }
        Ok(Self { config, features, stats, seed, params })
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|t| t.data.len()).sum()
    }

    fn w(&self, layer: usize) -> &[f64] {
        &self.params[2 * layer].data
    }

    fn b(&self, layer: usize) -> &[f64] {
        &self.params[2 * layer + 1].data
    }

    /// Zero-filled gradient buffers shaped like the parameters.
    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|t| vec![0.0; t.data.len()]).collect()
    }

    /// Normalized input tensor for a patch.
    pub fn featurize(&self, patch: &PatchStack) -> Result<Vec<f64>> {
        let mut x = self.features.encode(patch)?;
        self.stats.normalize(&mut x);
        Ok(x)
    }

    fn check_input(&self, input: &[f64], size: usize) -> Result<()> {
        if size == 0 || size % SIZE_MULTIPLE != 0 {
            return Err(Error::Config(format!("patch size {size} is not a positive multiple of {SIZE_MULTIPLE}")));
        }
        if input.len() != self.config.in_channels * size * size {
            return Err(Error::Config(format!(
                "input has {} values, expected {} channels of {size}×{size}",
                input.len(),
                self.config.in_channels
            )));
        }
        Ok(())
    }

    /// Runs the network on a normalized `C×size×size` input.
    pub fn forward_input(&self, input: &[f64], size: usize) -> Result<(Outputs, ForwardCache)> {
        self.check_input(input, size)?;
        let [w0, w1, w2, w3] = self.config.widths;
        let c = self.config.in_channels;
        let (s1, s2, s3, s4) = (size, size / 2, size / 4, size / 8);
        let conv = |x: &[f64], layer: usize, cin: usize, cout: usize, s: usize| {
            let mut y = conv3x3(x, cin, s, s, self.w(layer), self.b(layer), cout);
            relu_inplace(&mut y);
            y
        };
        let a1 = conv(input, ENC1, c, w0, s1);
        let p1 = avgpool2(&a1, w0, s1, s1);
        let a2 = conv(&p1, ENC2, w0, w1, s2);
        let p2 = avgpool2(&a2, w1, s2, s2);
        let a3 = conv(&p2, ENC3, w1, w2, s3);
        let p3 = avgpool2(&a3, w2, s3, s3);
        let a4a = conv(&p3, ENC4A, w2, w3, s4);
        let a4b = conv(&a4a, ENC4B, w3, w3, s4);
        let c3 = concat(&upsample2(&a4b, w3, s4, s4), &a3);
        let d3 = conv(&c3, DEC3, w3 + w2, w2, s3);
        let c2 = concat(&upsample2(&d3, w2, s3, s3), &a2);
        let d2 = conv(&c2, DEC2, w2 + w1, w1, s2);
        let c1 = concat(&upsample2(&d2, w1, s2, s2), &a1);
        let d1 = conv(&c1, DEC1, w1 + w0, w0, s1);
        let plane = s1 * s1;
        let logits = conv1x1(&d1, w0, plane, self.w(SEG), self.b(SEG), self.config.num_classes);
        let recon = conv1x1(&d1, w0, plane, self.w(RECON), self.b(RECON), c);
        let cache = ForwardCache { size, input: input.to_vec(), a1, p1, a2, p2, a3, p3, a4a, a4b, c3, d3, c2, d2, c1, d1 };
        Ok((Outputs { logits, recon }, cache))
    }

    /// Class probabilities, `K×P×P`, for a raw patch.
    pub fn forward(&self, patch: &PatchStack) -> Result<Vec<f64>> {
        let x = self.featurize(patch)?;
        self.predict_input(&x, patch.size_p)
    }

    /// Class probabilities for a normalized input.
    pub fn predict_input(&self, input: &[f64], size: usize) -> Result<Vec<f64>> {
        let (out, _) = self.forward_input(input, size)?;
        Ok(softmax_channels(&out.logits, self.config.num_classes, size * size))
    }

    /// Accumulates parameter gradients given gradients on the head outputs.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        dlogits: Option<&[f64]>,
        drecon: Option<&[f64]>,
        grads: &mut [Vec<f64>],
    ) {
        let [w0, w1, w2, w3] = self.config.widths;
        let c = self.config.in_channels;
        let size = cache.size;
        let (s1, s2, s3, s4) = (size, size / 2, size / 4, size / 8);
        let plane = s1 * s1;

        let mut dd1 = vec![0.0; w0 * plane];
        for (layer, dout, cout) in [(SEG, dlogits, self.config.num_classes), (RECON, drecon, c)] {
            if let Some(g) = dout {
                let (gw, gb) = two(grads, 2 * layer);
                let d = conv1x1_backward(&cache.d1, w0, plane, self.w(layer), cout, g, gw, gb);
                for (a, b) in dd1.iter_mut().zip(&d) {
                    *a += b;
                }
            }
        }

        let conv_back = |grads: &mut [Vec<f64>], layer: usize, x: &[f64], cin: usize, cout: usize, s: usize, out: &[f64], mut g: Vec<f64>, need: bool| {
            relu_backward_inplace(out, &mut g);
            let (gw, gb) = two(grads, 2 * layer);
            conv3x3_backward(x, cin, s, s, self.w(layer), cout, &g, gw, gb, need)
        };

        let dc1 = conv_back(grads, DEC1, &cache.c1, w1 + w0, w0, s1, &cache.d1, dd1, true).unwrap();
        let (du1, da1_skip) = dc1.split_at(w1 * plane);
        let dd2 = upsample2_backward(du1, w1, s2, s2);
        let dc2 = conv_back(grads, DEC2, &cache.c2, w2 + w1, w1, s2, &cache.d2, dd2, true).unwrap();
        let (du2, da2_skip) = dc2.split_at(w2 * s2 * s2);
        let dd3 = upsample2_backward(du2, w2, s3, s3);
        let dc3 = conv_back(grads, DEC3, &cache.c3, w3 + w2, w2, s3, &cache.d3, dd3, true).unwrap();
        let (du3, da3_skip) = dc3.split_at(w3 * s3 * s3);
        let da4b = upsample2_backward(du3, w3, s4, s4);
        let da4a = conv_back(grads, ENC4B, &cache.a4a, w3, w3, s4, &cache.a4b, da4b, true).unwrap();
        let dp3 = conv_back(grads, ENC4A, &cache.p3, w2, w3, s4, &cache.a4a, da4a, true).unwrap();
        let mut da3 = avgpool2_backward(&dp3, w2, s3, s3);
        add(&mut da3, da3_skip);
        let dp2 = conv_back(grads, ENC3, &cache.p2, w1, w2, s3, &cache.a3, da3, true).unwrap();
        let mut da2 = avgpool2_backward(&dp2, w1, s2, s2);
        add(&mut da2, da2_skip);
        let dp1 = conv_back(grads, ENC2, &cache.p1, w0, w1, s2, &cache.a2, da2, true).unwrap();
        let mut da1 = avgpool2_backward(&dp1, w0, s1, s1);
        add(&mut da1, da1_skip);
        conv_back(grads, ENC1, &cache.input, c, w0, s1, &cache.a1, da1, false);
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&self.encode()?)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::decode(&bytes)
    }

    /// Magic, little-endian u32 header length, JSON header, then every
    /// parameter as little-endian f32 in declaration order.
    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = CheckpointHeader {
            config: self.config.clone(),
            features: self.features.clone(),
            stats: self.stats.clone(),
            seed: self.seed,
            tensors: self.params.iter().map(|t| t.info.clone()).collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(8 + json.len() + 4 * self.num_params());
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for t in &self.params {
            for v in &t.data {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a model checkpoint (bad magic)".into()));
        }
        let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let json = bytes.get(8..8 + len).ok_or_else(|| Error::Corrupt("checkpoint header truncated".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(json)?;
        let reference = Self::init(header.config.clone(), header.features.clone(), header.stats.clone(), header.seed)?;
        let expected: Vec<TensorInfo> = reference.params.iter().map(|t| t.info.clone()).collect();
        if expected != header.tensors {
            return Err(Error::Corrupt("checkpoint tensor layout does not match its architecture".into()));
        }
        let mut pos = 8 + len;
        let mut params = Vec::with_capacity(expected.len());
        for info in expected {
            let n: usize = info.shape.iter().product();
            let raw = bytes
                .get(pos..pos + 4 * n)
                .ok_or_else(|| Error::Corrupt(format!("checkpoint data truncated in `{}`", info.name)))?;
            let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect();
            params.push(Tensor { info, data });
            pos += 4 * n;
        }
        if pos != bytes.len() {
            return Err(Error::Corrupt("trailing bytes after checkpoint data".into()));
        }
        Ok(Self { config: header.config, features: header.features, stats: header.stats, seed: header.seed, params })
    }

    /// Rounds every parameter to f32, matching a save/load round trip.
    pub fn quantize_f32(&mut self) {
        for t in &mut self.params {
            for v in &mut t.data {
                *v = *v as f32 as f64;
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: NetConfig,
    features: FeatureSpec,
    stats: ChannelStats,
    seed: u64,
    tensors: Vec<TensorInfo>,
}

fn two(grads: &mut [Vec<f64>], i: usize) -> (&mut [f64], &mut [f64]) {
    let (a, b) = grads.split_at_mut(i + 1);
    (&mut a[i], &mut b[0])
}

fn add(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Three plain input channels with identity statistics.
    fn toy_state(seed: u64, k: usize) -> ModelState {
        let spec = FeatureSpec { distance_channels: Vec::new() };
        let mut config = NetConfig::new(3, k);
        config.widths = [4, 6, 8, 8];
        let mut s = ModelState::init(NetConfig::new(spec.num_channels(), k), spec.clone(), ChannelStats::identity(spec.num_channels()), seed).unwrap();
        // swap in a 3-channel network for gradient checks on raw inputs
        s.config = config.clone();
        s.stats = ChannelStats::identity(3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        s.params = config
            .layers()
            .into_iter()
            .flat_map(|(name, kk, cin, cout)| {
                let scale = (2.0 / (cin * kk * kk) as f64).sqrt();
                let w = (0..cout * cin * kk * kk).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
                let b = (0..cout).map(|_| rng.random_range(-0.1..0.1)).collect();
                [
                    Tensor { info: TensorInfo { name: format!("{name}.w"), shape: vec![cout, cin, kk, kk] }, data: w },
                    Tensor { info: TensorInfo { name: format!("{name}.b"), shape: vec![cout] }, data: b },
                ]
            })
            .collect();
        s
    }

    fn toy_loss(s: &ModelState, x: &[f64], target: &[f64], rt: &[f64]) -> f64 {
        let (out, _) = s.forward_input(x, 16).unwrap();
        let p = softmax_channels(&out.logits, 2, 256);
        let seg: f64 = p.iter().zip(target).map(|(a, b)| a * b).sum();
        let rec: f64 = out.recon.iter().zip(rt).map(|(a, b)| (a - b).powi(2)).sum();
        seg + 0.1 * rec
    }

    #[test]
    fn probabilities_sum_to_one_and_are_deterministic() {
        let s = toy_state(3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..3 * 256).map(|_| rng.random_range(-2.0..2.0)).collect();
        let p = s.predict_input(&x, 16).unwrap();
        for i in 0..256 {
            let sum: f64 = (0..3).map(|k| p[k * 256 + i]).sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
        assert_eq!(p, s.predict_input(&x, 16).unwrap());
        assert!(matches!(s.predict_input(&x[..100], 16), Err(Error::Config(_))));
        assert!(s.predict_input(&x, 12).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut s = toy_state(11, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x: Vec<f64> = (0..3 * 256).map(|_| rng.random_range(-1.0..1.0)).collect();
        let target: Vec<f64> = (0..2 * 256).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rt: Vec<f64> = (0..3 * 256).map(|_| rng.random_range(-1.0..1.0)).collect();

        let (out, cache) = s.forward_input(&x, 16).unwrap();
        let p = softmax_channels(&out.logits, 2, 256);
        // d(Σ p·t)/dz through the softmax
        let mut dlogits = vec![0.0; 512];
        for i in 0..256 {
            let dot = p[i] * target[i] + p[256 + i] * target[256 + i];
            for k in 0..2 {
                dlogits[k * 256 + i] = p[k * 256 + i] * (target[k * 256 + i] - dot);
            }
        }
        let drecon: Vec<f64> = out.recon.iter().zip(&rt).map(|(a, b)| 0.2 * (a - b)).collect();
        let mut grads = s.zero_grads();
        s.backward(&cache, Some(&dlogits), Some(&drecon), &mut grads);

        let mut checked = 0;
        for t in 0..s.params.len() {
            for _ in 0..6 {
                let i = rng.random_range(0..s.params[t].data.len());
                let h = 1e-5;
                let orig = s.params[t].data[i];
                s.params[t].data[i] = orig + h;
                let lp = toy_loss(&s, &x, &target, &rt);
                s.params[t].data[i] = orig - h;
                let lm = toy_loss(&s, &x, &target, &rt);
                s.params[t].data[i] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let g = grads[t][i];
                let denom = fd.abs().max(g.abs());
                // tiny gradients are dominated by rounding in the difference quotient
                if denom > 1e-4 {
                    assert!((fd - g).abs() / denom < 1e-3, "{} [{i}]: fd {fd} vs analytic {g}", s.params[t].info.name);
                    checked += 1;
                }
            }
        }
        assert!(checked > 30, "only {checked} entries were large enough to check");
    }

    #[test]
    fn checkpoint_round_trip() {
        let spec = FeatureSpec { distance_channels: vec!["dist_a".into()] };
        let c = spec.num_channels();
        let mut s = ModelState::init(NetConfig::new(c, 2), spec, ChannelStats::identity(c), 5).unwrap();
        assert!(s.num_params() > 90_000 && s.num_params() < 110_000);
        let bytes = s.encode().unwrap();
        let back = ModelState::decode(&bytes).unwrap();
        s.quantize_f32();
        assert_eq!(back, s);
        assert!(matches!(ModelState::decode(&bytes[..bytes.len() - 3]), Err(Error::Corrupt(_))));
        assert!(matches!(ModelState::decode(b"NOPE0000"), Err(Error::Format(_))));
    }
}
