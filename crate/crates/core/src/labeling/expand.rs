use serde::{Deserialize, Serialize};

use super::SamplePoint;
use crate::raster::{Cell, LandCoverScheme, PatchStack, RasterGrid};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    #[default]
    Binary,
    Ternary,
}

impl LabelMode {
    pub fn num_classes(self) -> usize {
        match self {
            LabelMode::Binary => 2,
            LabelMode::Ternary => 3,
        }
    }

    /// Label-mask value for cells that are not surface water.
    pub fn non_water_label(self) -> u8 {
        self.num_classes() as u8
    }
}

/// Samples whose location falls inside the grid, paired with their cell.
pub fn samples_in_patch<'a>(template: &RasterGrid, samples: &'a [SamplePoint]) -> Vec<(&'a SamplePoint, Cell)> {
    samples
        .iter()
        .filter_map(|s| template.cell_of(s.location.0, s.location.1).map(|cell| (s, cell)))
        .collect()
}

/// Dense labels: every water cell takes the label of the nearest in-patch sample
/// (center-to-center, earlier samples win ties); everything else gets the
/// non-water label.
pub fn expand_ground_truth(patch: &PatchStack, samples: &[SamplePoint], mode: LabelMode) -> Result<RasterGrid> {
    let lc = patch.landcover()?;
    let inside = samples_in_patch(lc, samples);
    if inside.is_empty() {
        return Err(Error::NoSamples);
    }
    let scheme = LandCoverScheme;
    let mut out = lc.like(mode.non_water_label() as f64);
    for r in 0..lc.height {
        for c in 0..lc.width {
            if !scheme.is_water(lc.get(r, c)) {
                continue;
            }
            let mut best = (i64::MAX, 0u8);
            for (s, (sr, sc)) in &inside {
                let (dr, dc) = (r as i64 - *sr as i64, c as i64 - *sc as i64);
                let d2 = dr * dr + dc * dc;
                if d2 < best.0 {
                    best = (d2, s.label);
                }
            }
            out.set(r, c, best.1 as f64);
        }
    }
    Ok(out)
}
