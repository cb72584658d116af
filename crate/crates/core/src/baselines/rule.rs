//! Heuristic contamination map from the expert evidence terms, without sample
//! proximity.

use serde::{Deserialize, Serialize};

use crate::hydro::FlowDirGrid;
use crate::labeling::{p_dischargers, p_landcover, samples_in_patch, DownstreamEvidence, NoiseParams, NoiseWeights, SamplePoint};
use crate::raster::{LandCoverScheme, PatchStack, RasterGrid};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleParams {
    pub weights: NoiseWeights,
    pub noise: NoiseParams,
    pub threshold: f64,
}

impl Default for RuleParams {
    fn default() -> Self {
        Self { weights: NoiseWeights::default(), noise: NoiseParams::default(), threshold: 0.5 }
    }
}

/// Contamination probability per water cell under the label-1 hypothesis:
/// discharger, land-cover and downstream evidence combined with the
/// noise-mask weights, renormalized without the sample-distance weight.
/// `known` samples contribute downstream traces; non-water cells are nodata.
pub fn rule_based_probability(patch: &PatchStack, dirs: &FlowDirGrid, known: &[SamplePoint], params: &RuleParams) -> Result<RasterGrid> {
    let w = params.weights;
    let denom = w.dischargers + w.landcover + w.downstream;
    if !(denom > 0.0) {
        return Err(Error::Weights(w.as_array()));
    }
    let lc = patch.landcover()?;
    if !dirs.grid().same_geometry(lc) {
        return Err(Error::Invalid("flow directions do not match the patch geometry".into()));
    }
    let inside: Vec<_> = samples_in_patch(lc, known).into_iter().map(|(s, c)| (s.label, c)).collect();
    let evidence = DownstreamEvidence::build(dirs, &inside)?;
    let scheme = LandCoverScheme;
    let radius = params.noise.landcover_radius;
    let mut out = lc.like(lc.nodata);
    for r in 0..lc.height {
        for c in 0..lc.width {
            if !scheme.is_water(lc.get(r, c)) {
                continue;
            }
            let pd = p_dischargers(patch, (r, c), 1, params.noise.lambda_dischargers);
            let pl = p_landcover(patch, (r, c), 1, radius)?;
            let pdown = evidence.probability((r, c), 1);
            out.set(r, c, (w.dischargers * pd + w.landcover * pl + w.downstream * pdown) / denom);
        }
    }
    Ok(out)
}

/// Thresholded [`rule_based_probability`]: 1 where the probability reaches the threshold.
pub fn rule_based_predict(patch: &PatchStack, dirs: &FlowDirGrid, known: &[SamplePoint], params: &RuleParams) -> Result<RasterGrid> {
    let mut p = rule_based_probability(patch, dirs, known, params)?;
    for v in &mut p.values {
        if *v != p.nodata {
            *v = if *v >= params.threshold { 1.0 } else { 0.0 };
        }
    }
    Ok(p)
}
