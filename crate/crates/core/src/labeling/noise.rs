//! Expert-informed label confidence.
//!
//! Each surface-water cell gets a convex combination of four evidence terms:
//! proximity to dischargers, surrounding land cover, proximity to sample points,
//! and whether the cell sits downstream of a sample. Sample cells then receive
//! overrides: certain for above-threshold samples, down-weighted by the
//! detection-limit ratio for below-threshold ones.

use serde::{Deserialize, Serialize};

use super::{samples_in_patch, LabelMode, SamplePoint};
use crate::hydro::{downstream_path, FlowDirGrid};
use crate::raster::{Cell, ChannelRole, LandCoverScheme, PatchStack, RasterGrid};
use crate::{Error, Result};

/// Mixing weights for the four evidence terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseWeights {
    pub dischargers: f64,
    pub landcover: f64,
    pub sample_dist: f64,
    pub downstream: f64,
}

impl Default for NoiseWeights {
    fn default() -> Self {
        Self { dischargers: 0.4, landcover: 0.2, sample_dist: 0.1, downstream: 0.3 }
    }
}

impl NoiseWeights {
    pub fn new(dischargers: f64, landcover: f64, sample_dist: f64, downstream: f64) -> Result<Self> {
        let w = Self { dischargers, landcover, sample_dist, downstream };
        w.validate()?;
        Ok(w)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.dischargers, self.landcover, self.sample_dist, self.downstream]
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.as_array();
        let sum: f64 = a.iter().sum();
        if a.iter().any(|w| !w.is_finite() || *w < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Weights(a));
        }
        Ok(())
    }

    /// Weighted sum of `[dischargers, landcover, sample_dist, downstream]` terms.
    pub fn combine(&self, terms: [f64; 4]) -> f64 {
        self.as_array().iter().zip(terms).map(|(w, p)| w * p).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// Decay length for discharger proximity, meters.
    pub lambda_dischargers: f64,
    /// Decay length for sample proximity, meters.
    pub lambda_sample: f64,
    /// Land-cover neighbourhood radius in cells.
    pub landcover_radius: usize,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self { lambda_dischargers: 1000.0, lambda_sample: 500.0, landcover_radius: 5 }
    }
}

fn binary(label: u8) -> u8 {
    label.min(1)
}

/// Smallest value over the distance channels at a cell, ignoring nodata.
fn min_discharger_distance(patch: &PatchStack, cell: Cell) -> f64 {
    patch
        .all_by_role(ChannelRole::Distance)
        .map(|ch| ch.grid.get(cell.0, cell.1))
        .filter(|v| *v >= 0.0)
        .fold(f64::INFINITY, f64::min)
}

fn decay_by_label(d: f64, lambda: f64, label: u8) -> f64 {
    let p = (-d / lambda).exp();
    if binary(label) == 1 {
        p
    } else {
        1.0 - p
    }
}

/// `exp(−d/λ)` for label 1 and `1 − exp(−d/λ)` for label 0, with `d` the
/// nearest-discharger distance at the cell. No distance channels means `d = ∞`.
pub fn p_dischargers(patch: &PatchStack, cell: Cell, label: u8, decay_lambda: f64) -> f64 {
    decay_by_label(min_discharger_distance(patch, cell), decay_lambda, label)
}

fn landcover_fraction(lc: &RasterGrid, cell: Cell, label: u8, radius: usize) -> f64 {
    let scheme = LandCoverScheme;
    let (r0, r1) = (cell.0.saturating_sub(radius), (cell.0 + radius).min(lc.height - 1));
    let (c0, c1) = (cell.1.saturating_sub(radius), (cell.1 + radius).min(lc.width - 1));
    let mut hits = 0usize;
    let mut total = 0usize;
    for r in r0..=r1 {
        for c in c0..=c1 {
            let v = lc.get(r, c);
            let hit = if binary(label) == 1 { scheme.is_developed(v) } else { scheme.is_undeveloped(v) };
            hits += usize::from(hit);
            total += 1;
        }
    }
    hits as f64 / total as f64
}

/// Share of developed (label 1) or undeveloped (label 0) cells in the
/// `(2r+1)²` neighbourhood, clipped at the patch border.
pub fn p_landcover(patch: &PatchStack, cell: Cell, label: u8, radius: usize) -> Result<f64> {
    Ok(landcover_fraction(patch.landcover()?, cell, label, radius))
}

fn nearest_sample_distance(template: &RasterGrid, cell: Cell, sample_cells: &[Cell]) -> f64 {
    sample_cells
        .iter()
        .map(|&(r, c)| {
            let dr = cell.0 as f64 - r as f64;
            let dc = cell.1 as f64 - c as f64;
            (dr * dr + dc * dc).sqrt() * template.cell_size
        })
        .fold(f64::INFINITY, f64::min)
}

/// `exp(−d/λ)` with `d` the distance to the nearest in-patch sample.
pub fn p_sample_dist(patch: &PatchStack, cell: Cell, samples: &[SamplePoint], decay_lambda: f64) -> Result<f64> {
    let t = patch.template()?;
    let cells: Vec<Cell> = samples_in_patch(t, samples).into_iter().map(|(_, c)| c).collect();
    Ok((-nearest_sample_distance(t, cell, &cells) / decay_lambda).exp())
}

/// Which cells lie on the downstream trace of a below- or above-threshold sample.
#[derive(Debug, Clone)]
pub struct DownstreamEvidence {
    width: usize,
    below: Vec<bool>,
    above: Vec<bool>,
}

impl DownstreamEvidence {
    pub fn build(dirs: &FlowDirGrid, sample_cells: &[(u8, Cell)]) -> Result<Self> {
        let g = dirs.grid();
        let mut ev = Self { width: g.width, below: vec![false; g.len()], above: vec![false; g.len()] };
        for &(label, seed) in sample_cells {
            let target = if binary(label) == 1 { &mut ev.above } else { &mut ev.below };
            for (r, c) in downstream_path(dirs, seed)? {
                target[r * g.width + c] = true;
            }
        }
        Ok(ev)
    }

    /// 1 when a matching-label trace passes through the cell, 0 when only
    /// opposite-label traces do, 0.5 without evidence.
    pub fn probability(&self, cell: Cell, label: u8) -> f64 {
        let i = cell.0 * self.width + cell.1;
        let (same, other) = if binary(label) == 1 { (self.above[i], self.below[i]) } else { (self.below[i], self.above[i]) };
        if same {
            1.0
        } else if other {
            0.0
        } else {
            0.5
        }
    }
}

fn flow_dirs(patch: &PatchStack) -> Result<FlowDirGrid> {
    FlowDirGrid::from_raster(patch.require(ChannelRole::Flowdir)?.clone())
}

fn labeled_cells(template: &RasterGrid, samples: &[SamplePoint]) -> Vec<(u8, Cell)> {
    samples_in_patch(template, samples).into_iter().map(|(s, c)| (s.label, c)).collect()
}

/// Downstream evidence for one cell under the given label.
pub fn p_downstream(
    patch: &PatchStack,
    cell: Cell,
    label: u8,
    samples: &[SamplePoint],
    dirs: &FlowDirGrid,
) -> Result<f64> {
    let ev = DownstreamEvidence::build(dirs, &labeled_cells(patch.template()?, samples))?;
    Ok(ev.probability(cell, label))
}

/// Per-cell label confidence over the surface-water cells of a patch.
///
/// Non-water cells are nodata. Above-threshold sample cells are exactly 1;
/// below-threshold sample cells are the combined value times the sample's
/// detection-limit multiplier.
pub fn noise_mask(
    patch: &PatchStack,
    label_mask: &RasterGrid,
    samples: &[SamplePoint],
    weights: &NoiseWeights,
    params: &NoiseParams,
    mode: LabelMode,
) -> Result<RasterGrid> {
    weights.validate()?;
    let lc = patch.landcover()?;
    if !label_mask.same_geometry(lc) {
        return Err(Error::Invalid("label mask does not match the patch geometry".into()));
    }
    let dirs = flow_dirs(patch)?;
    let inside = samples_in_patch(lc, samples);
    let sample_cells: Vec<Cell> = inside.iter().map(|(_, c)| *c).collect();
    let evidence = DownstreamEvidence::build(&dirs, &inside.iter().map(|(s, c)| (s.label, *c)).collect::<Vec<_>>())?;
    let scheme = LandCoverScheme;
    let non_water = mode.non_water_label() as f64;

    let mut out = lc.like(lc.nodata);
    for r in 0..lc.height {
        for c in 0..lc.width {
            if !scheme.is_water(lc.get(r, c)) {
                continue;
            }
            let lv = label_mask.get(r, c);
            if lv == non_water {
                return Err(Error::Invalid(format!("water cell ({r},{c}) carries the non-water label")));
            }
            let label = lv as u8;
            let terms = [
                p_dischargers(patch, (r, c), label, params.lambda_dischargers),
                landcover_fraction(lc, (r, c), label, params.landcover_radius),
                (-nearest_sample_distance(lc, (r, c), &sample_cells) / params.lambda_sample).exp(),
                evidence.probability((r, c), label),
            ];
            out.set(r, c, weights.combine(terms));
        }
    }
    // below-threshold overrides first so an above-threshold sample in the same cell wins
    let mut ordered: Vec<_> = inside.iter().collect();
    ordered.sort_by_key(|(s, _)| s.label.min(1));
    for (s, (r, c)) in ordered {
        let v = out.get(*r, *c);
        if out.is_nodata(v) {
            continue;
        }
        if s.label >= 1 {
            out.set(*r, *c, 1.0);
        } else {
            out.set(*r, *c, v * s.mdl_multiplier());
        }
    }
    Ok(out)
}
