//! Wall-clock comparison of patch-based inference against per-point buffer
//! aggregation.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::model::ModelState;
use crate::raster::{extract_patch, Channel, ChannelRole, LandCover};
use crate::{Error, Result};

/// Buffer radius of the per-point aggregation, meters.
pub const BUFFER_RADIUS_M: f64 = 5000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMode {
    PatchPipeline,
    PerPointAggregation,
}

impl std::str::FromStr for BenchMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "patch_pipeline" => Ok(Self::PatchPipeline),
            "per_point_aggregation" => Ok(Self::PerPointAggregation),
            _ => Err(Error::Invalid(format!("unknown benchmark mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Timing {
    pub mean: f64,
    pub std: f64,
}

impl Timing {
    /// Population standard deviation.
    pub fn of(samples: &[f64]) -> Self {
        let n = samples.len().max(1) as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub mode: BenchMode,
    pub points: usize,
    pub runs: usize,
    pub threads: usize,
    /// Seconds per run.
    pub extraction: Vec<f64>,
    pub inference: Vec<f64>,
    /// Per-point scores of the last run.
    pub outputs: Vec<f64>,
}

impl BenchReport {
    pub fn extraction_stats(&self) -> Timing {
        Timing::of(&self.extraction)
    }

    pub fn inference_stats(&self) -> Timing {
        Timing::of(&self.inference)
    }

    pub fn total_stats(&self) -> Timing {
        let t: Vec<f64> = self.extraction.iter().zip(&self.inference).map(|(a, b)| a + b).collect();
        Timing::of(&t)
    }
}

fn per_point_features(world: &[Channel], facilities: &[(f64, f64)], p: (f64, f64)) -> Result<[f64; 9]> {
    let lc = world
        .iter()
        .find(|c| c.role == ChannelRole::Landcover)
        .map(|c| &c.grid)
        .ok_or_else(|| Error::Invalid("world has no land-cover channel".into()))?;
    let (r, c) = lc.cell_of(p.0, p.1).ok_or_else(|| Error::Invalid(format!("point {p:?} lies outside the world")))?;
    let rad = (BUFFER_RADIUS_M / lc.cell_size).floor() as isize;
    let mut counts = [0usize; 8];
    let mut total = 0usize;
    for dr in -rad..=rad {
        for dc in -rad..=rad {
            if dr * dr + dc * dc > rad * rad {
                continue;
            }
            let (rr, cc) = (r as isize + dr, c as isize + dc);
            if !lc.in_bounds(rr, cc) {
                continue;
            }
            if let Some(class) = LandCover::from_value(lc.get(rr as usize, cc as usize)) {
                counts[LandCover::ALL.iter().position(|k| *k == class).unwrap_or(0)] += 1;
                total += 1;
            }
        }
    }
    let mut f = [0.0; 9];
    for (k, n) in counts.iter().enumerate() {
        f[k] = *n as f64 / total.max(1) as f64;
    }
    f[8] = facilities.iter().map(|q| (q.0 - p.0).hypot(q.1 - p.1)).fold(f64::INFINITY, f64::min);
    Ok(f)
}

/// Times feature extraction and scoring at `points` over `runs` repetitions.
///
/// The patch pipeline cuts one `size`-cell patch per point and runs the
/// network; the aggregation mode tallies land-cover shares in a 5 km buffer
/// and the nearest facility distance, then applies a fixed linear score.
pub fn timing_benchmark(
    world: &[Channel],
    facilities: &[(f64, f64)],
    points: &[(f64, f64)],
    mode: BenchMode,
    runs: usize,
    state: &ModelState,
    size: usize,
) -> Result<BenchReport> {
    let mut report = BenchReport {
        mode,
        points: points.len(),
        runs,
        threads: rayon::current_num_threads(),
        extraction: Vec::with_capacity(runs),
        inference: Vec::with_capacity(runs),
        outputs: Vec::new(),
    };
    for _ in 0..runs {
        let (extract_s, infer_s, outputs) = match mode {
            BenchMode::PatchPipeline => {
                let t0 = Instant::now();
                let inputs = points
                    .iter()
                    .map(|p| state.featurize(&extract_patch(world, *p, size)?))
                    .collect::<Result<Vec<_>>>()?;
                let t1 = Instant::now();
                let k = state.config.num_classes;
                let centre = (size / 2) * size + size / 2;
                let outputs = inputs
                    .iter()
                    .map(|x| Ok(state.predict_input(x, size)?[(k - 1) * size * size + centre]))
                    .collect::<Result<Vec<_>>>()?;
                (t1 - t0, t1.elapsed(), outputs)
            }
            BenchMode::PerPointAggregation => {
                let t0 = Instant::now();
                let feats = points.iter().map(|p| per_point_features(world, facilities, *p)).collect::<Result<Vec<_>>>()?;
                let t1 = Instant::now();
                let outputs = feats
                    .iter()
                    .map(|f| {
                        let developed = f[1] + f[2] + f[3];
                        let near = (-f[8] / BUFFER_RADIUS_M).exp();
                        1.0 / (1.0 + (-(2.0 * developed + 2.0 * near - 1.0)).exp())
                    })
                    .collect();
                (t1 - t0, t1.elapsed(), outputs)
            }
        };
        report.extraction.push(extract_s.as_secs_f64());
        report.inference.push(infer_s.as_secs_f64());
        report.outputs = outputs;
    }
    Ok(report)
}
