//! Sparse water samples drawn from a world's planted contamination field.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::World;
use crate::labeling::{Compound, LabelMode, SamplePoint};
use crate::raster::{ChannelRole, LandCoverScheme};
use crate::{Error, Result};

/// (name, threshold, share of the hazard index).
const COMPOUNDS: [(&str, f64, f64); 3] = [("PFOS", 0.02, 0.5), ("PFOA", 0.004, 0.3), ("PFHxS", 0.01, 0.2)];
const POSITIVE_HI: (f64, f64) = (1.05, 3000.0);
const NEGATIVE_HI: (f64, f64) = (0.05, 0.95);
/// Planted concentrations below this are indistinguishable from clean water.
pub const DETECTION_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleSpec {
    pub n: usize,
    /// (positive, negative) shares.
    pub imbalance: (f64, f64),
    pub seed: u64,
    /// Minimum cells between a sample and the world edge.
    pub margin: usize,
    pub flip_rate: f64,
    pub mode: LabelMode,
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self { n: 250, imbalance: (0.895, 0.105), seed: 0, margin: 16, flip_rate: 0.0, mode: LabelMode::Binary }
    }
}

/// Log-spaced value at relative rank `t ∈ [0, 1]`.
fn log_lerp(range: (f64, f64), t: f64) -> f64 {
    (range.0.ln() + (range.1.ln() - range.0.ln()) * t).exp()
}

fn synth_compounds(hi: f64, rng: &mut ChaCha8Rng) -> Vec<Compound> {
    COMPOUNDS
        .iter()
        .map(|(name, threshold, share)| {
            // occasionally an elevated detection limit, as with diluted extracts
            let mdl = if rng.random::<f64>() < 0.2 { 2.0 * threshold } else { 0.5 * threshold };
            Compound { name: (*name).into(), concentration: share * hi * threshold, threshold: *threshold, mdl }
        })
        .collect()
}

/// Draws `spec.n` distinct water cells and labels them so that exactly
/// `n − round(n·negative share)` are above threshold.
///
/// The lowest-contamination cells become negatives. Concentrations below
/// [`DETECTION_FLOOR`] count as tied, and ties go to the cell farthest from
/// any discharger.
pub fn sample_points(world: &World, spec: &SampleSpec) -> Result<Vec<SamplePoint>> {
    let (pos, neg) = spec.imbalance;
    if spec.n < 2 {
        return Err(Error::Invalid(format!("need at least 2 samples, got {}", spec.n)));
    }
    if pos < 0.0 || neg < 0.0 || ((pos + neg) - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid(format!("imbalance ({pos}, {neg}) must be nonnegative and sum to 1")));
    }
    let lc = world.landcover()?;
    let truth = world.truth()?;
    let n = lc.width;
    let m = spec.margin;
    let scheme = LandCoverScheme;
    let mut eligible: Vec<usize> = (0..lc.len())
        .filter(|i| {
            let (r, c) = (i / n, i % n);
            r >= m && c >= m && r + m <= lc.height && c + m <= n && scheme.is_water(lc.values[*i])
        })
        .collect();
    if eligible.len() < spec.n {
        return Err(Error::Invalid(format!("only {} water cells available for {} samples", eligible.len(), spec.n)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    eligible.shuffle(&mut rng);
    eligible.truncate(spec.n);

    let nearest: Vec<f64> = eligible
        .iter()
        .map(|i| {
            world
                .channels
                .iter()
                .filter(|c| c.role == ChannelRole::Distance)
                .map(|c| c.grid.values[*i])
                .filter(|v| *v >= 0.0)
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let level = |k: usize| {
        let t = truth.values[eligible[k]];
        if t < DETECTION_FLOOR { 0.0 } else { t }
    };
    let mut order: Vec<usize> = (0..spec.n).collect();
    order.sort_by(|a, b| {
        level(*a)
            .total_cmp(&level(*b))
            .then(nearest[*b].total_cmp(&nearest[*a]))
            .then(eligible[*a].cmp(&eligible[*b]))
    });
    let n_neg = spec.n - (spec.n as f64 * pos).round() as usize;
    let n_pos = spec.n - n_neg;

    let mut his = vec![0.0; spec.n];
    for (rank, k) in order.iter().enumerate() {
        his[*k] = if rank < n_neg {
            log_lerp(NEGATIVE_HI, rank as f64 / (n_neg.max(2) - 1) as f64)
        } else {
            log_lerp(POSITIVE_HI, (rank - n_neg) as f64 / (n_pos.max(2) - 1) as f64)
        };
    }
    let mut out = Vec::with_capacity(spec.n);
    for (k, cell) in eligible.iter().enumerate() {
        let mut hi = his[k];
        if spec.flip_rate > 0.0 && rng.random::<f64>() < spec.flip_rate {
            let t = rng.random::<f64>();
            hi = if hi >= 1.0 { log_lerp(NEGATIVE_HI, t) } else { log_lerp(POSITIVE_HI, t) };
        }
        let compounds = synth_compounds(hi, &mut rng);
        let year = rng.random_range(2019..=2023);
        let location = lc.cell_center(cell / n, cell % n);
        out.push(SamplePoint::new(format!("S{:04}", k + 1), location, year, compounds, spec.mode)?);
    }
    Ok(out)
}
