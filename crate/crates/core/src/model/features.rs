//! Turns a patch into the network's input tensor: one-hot land cover, one-hot
//! flow direction and capped distance channels. Only the distance channels are
//! z-scored; the indicators stay 0/1.

use serde::{Deserialize, Serialize};

use crate::hydro::CODES;
use crate::raster::{ChannelRole, LandCover, PatchStack};
use crate::{Error, Result};

/// Distances beyond this many kilometers are treated as equally far.
pub const DISTANCE_CAP_KM: f64 = 20.0;

/// Which distance channels feed the network, in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub distance_channels: Vec<String>,
}

impl FeatureSpec {
    /// Every distance channel of the patch, in the patch's channel order.
    pub fn from_patch(patch: &PatchStack) -> Self {
        Self { distance_channels: patch.all_by_role(ChannelRole::Distance).map(|c| c.name.clone()).collect() }
    }

    pub fn num_channels(&self) -> usize {
        self.num_indicators() + self.distance_channels.len()
    }

    /// Leading one-hot channels (land cover, then flow direction).
    pub fn num_indicators(&self) -> usize {
        LandCover::ALL.len() + CODES.len()
    }

    /// Channel statistics for `inputs`: fitted on the distance channels,
    /// identity on the indicators.
    pub fn fit_stats(&self, inputs: &[Vec<f64>]) -> Result<ChannelStats> {
        let mut stats = ChannelStats::fit(inputs, self.num_channels())?;
        for ch in 0..self.num_indicators() {
            stats.mean[ch] = 0.0;
            stats.std[ch] = 1.0;
        }
        Ok(stats)
    }

    /// Raw (unnormalized) features, `C×P×P`.
    pub fn encode(&self, patch: &PatchStack) -> Result<Vec<f64>> {
        patch.validate_inputs()?;
        let lc = patch.landcover()?;
        let fd = patch.require(ChannelRole::Flowdir)?;
        let plane = lc.len();
        let mut out = vec![0.0; self.num_channels() * plane];
        for i in 0..plane {
            if let Some(k) = LandCover::from_value(lc.values[i]).and_then(|c| LandCover::ALL.iter().position(|x| *x == c)) {
                out[k * plane + i] = 1.0;
            }
            let code = fd.values[i];
            if let Some(k) = CODES.iter().position(|c| *c as f64 == code) {
                out[(LandCover::ALL.len() + k) * plane + i] = 1.0;
            }
        }
        let base = self.num_indicators();
        for (j, name) in self.distance_channels.iter().enumerate() {
            let ch = patch
                .channel(name)
                .ok_or_else(|| Error::Config(format!("patch lacks distance channel `{name}`")))?;
            for (i, v) in ch.grid.values.iter().enumerate() {
                let km = if ch.grid.is_nodata(*v) || *v < 0.0 { DISTANCE_CAP_KM } else { (v / 1000.0).min(DISTANCE_CAP_KM) };
                out[(base + j) * plane + i] = km;
            }
        }
        Ok(out)
    }
}

/// Per-channel mean and standard deviation of the training inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Identity normalization for `c` channels.
    pub fn identity(c: usize) -> Self {
        Self { mean: vec![0.0; c], std: vec![1.0; c] }
    }

    /// Statistics over every cell of every input; constant channels get std 1.
    pub fn fit(inputs: &[Vec<f64>], c: usize) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Invalid("cannot fit channel statistics on an empty set".into()));
        }
        let mut mean = vec![0.0; c];
        let mut sq = vec![0.0; c];
        let mut count = 0usize;
        for x in inputs {
            if x.len() % c != 0 {
                return Err(Error::Invalid("input length is not a multiple of the channel count".into()));
            }
            let plane = x.len() / c;
            count += plane;
            for ch in 0..c {
                mean[ch] += x[ch * plane..(ch + 1) * plane].iter().sum::<f64>();
            }
        }
        for m in &mut mean {
            *m /= count as f64;
        }
        for x in inputs {
            let plane = x.len() / c;
            for ch in 0..c {
                sq[ch] += x[ch * plane..(ch + 1) * plane].iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
            }
        }
        let std = sq
            .iter()
            .map(|s| {
                let sd = (s / count as f64).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn normalize(&self, x: &mut [f64]) {
        let c = self.mean.len();
        let plane = x.len() / c;
        for ch in 0..c {
            for v in &mut x[ch * plane..(ch + 1) * plane] {
                *v = (*v - self.mean[ch]) / self.std[ch];
            }
        }
    }

    pub fn denormalize(&self, x: &mut [f64]) {
        let c = self.mean.len();
        let plane = x.len() / c;
        for ch in 0..c {
            for v in &mut x[ch * plane..(ch + 1) * plane] {
                *v = *v * self.std[ch] + self.mean[ch];
            }
        }
    }
}
