//! Agreement of predictions where two overlapping patches cover the same ground.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::raster::{extract_patch, Channel, LandCoverScheme, PatchStack, RasterGrid};
use crate::{Error, Result};

/// Overlap sizes (cells per side) used by the default harness.
pub const DEFAULT_OVERLAPS: [usize; 2] = [56, 156];
pub const DEFAULT_PATCH: usize = 256;

/// Share of matching labels over cells covered by both grids where neither is nodata.
pub fn consistency_agreement(a: &RasterGrid, b: &RasterGrid) -> Result<f64> {
    if a.cell_size != b.cell_size {
        return Err(Error::Invalid("predictions have different cell sizes".into()));
    }
    let cs = a.cell_size;
    let shift_c = (b.origin.0 - a.origin.0) / cs;
    let shift_r = (a.origin.1 - b.origin.1) / cs;
    if (shift_c - shift_c.round()).abs() > 1e-6 || (shift_r - shift_r.round()).abs() > 1e-6 {
        return Err(Error::Invalid("predictions are not on a common cell lattice".into()));
    }
    // cell (r, c) of b is cell (r + dr, c + dc) of a
    let (dr, dc) = (shift_r.round() as isize, shift_c.round() as isize);
    let mut n = 0usize;
    let mut hits = 0usize;
    for r in 0..b.height {
        for c in 0..b.width {
            let (ra, ca) = (r as isize + dr, c as isize + dc);
            if !a.in_bounds(ra, ca) {
                continue;
            }
            let (va, vb) = (a.get(ra as usize, ca as usize), b.get(r, c));
            if a.is_nodata(va) || b.is_nodata(vb) {
                continue;
            }
            n += 1;
            hits += usize::from(va == vb);
        }
    }
    if n == 0 {
        return Err(Error::Invalid("predictions share no valid overlapping cells".into()));
    }
    Ok(hits as f64 / n as f64)
}

/// Sub-window of `size × size` cells starting at `(r0, c0)`.
pub fn crop(grid: &RasterGrid, r0: usize, c0: usize, size: usize) -> Result<RasterGrid> {
    if r0 + size > grid.height || c0 + size > grid.width {
        return Err(Error::Invalid(format!("crop {size}x{size} at ({r0},{c0}) exceeds {}x{}", grid.height, grid.width)));
    }
    let mut values = Vec::with_capacity(size * size);
    for r in r0..r0 + size {
        values.extend_from_slice(&grid.values[r * grid.width + c0..r * grid.width + c0 + size]);
    }
    let origin = (grid.origin.0 + c0 as f64 * grid.cell_size, grid.origin.1 - r0 as f64 * grid.cell_size);
    let mut out = RasterGrid::from_values(size, size, grid.cell_size, origin, values)?;
    out.nodata = grid.nodata;
    Ok(out)
}

/// Runs `predict` on a patch grown by `halo` cells per side and crops the
/// result back to the requested patch, so a predictor whose output depends
/// on a bounded neighbourhood sees the same context wherever the patch lies.
pub fn predict_with_halo<F>(world: &[Channel], patch: &PatchStack, halo: usize, mut predict: F) -> Result<RasterGrid>
where
    F: FnMut(&PatchStack) -> Result<RasterGrid>,
{
    let grown = extract_patch(world, patch.center, patch.size_p + 2 * halo)?;
    crop(&predict(&grown)?, halo, halo, patch.size_p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverlapTrial {
    pub overlap: usize,
    /// World cell of the first patch's center.
    pub row: usize,
    pub col: usize,
    pub agreement: f64,
}

/// Diagonally offset patch pairs: for each overlap size, the second patch is
/// shifted by `size − overlap` cells along both axes, giving an
/// `overlap × overlap` shared window. Locations are drawn so that both
/// patches (plus `margin`) fit and the shared window holds water.
pub fn overlap_trials<F>(
    world: &[Channel],
    size: usize,
    overlaps: &[usize],
    n_locations: usize,
    margin: usize,
    seed: u64,
    mut predict: F,
) -> Result<Vec<OverlapTrial>>
where
    F: FnMut(&PatchStack) -> Result<RasterGrid>,
{
    let lc = world
        .iter()
        .find(|c| c.role == crate::raster::ChannelRole::Landcover)
        .map(|c| &c.grid)
        .ok_or_else(|| Error::Invalid("world has no land-cover channel".into()))?;
    let scheme = LandCoverScheme;
    let half = size / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for &overlap in overlaps {
        if overlap == 0 || overlap >= size {
            return Err(Error::Invalid(format!("overlap {overlap} must lie in (0, {size})")));
        }
        let shift = size - overlap;
        let lo = half + margin;
        let hi = (lc.height.min(lc.width) + half).checked_sub(size + shift + margin).filter(|h| *h > lo);
        let Some(hi) = hi else {
            return Err(Error::Invalid(format!("world too small for {size}-cell patches {shift} cells apart")));
        };
        let mut placed = 0;
        let mut attempts = 0;
        while placed < n_locations {
            attempts += 1;
            if attempts > 10_000 {
                return Err(Error::Invalid("could not find overlaps containing water".into()));
            }
            let (r, c) = (rng.random_range(lo..hi), rng.random_range(lo..hi));
            let (r2, c2) = (r + shift, c + shift);
            // shared window rows [r2 − half, r − half + size)
            let has_water = (r2 - half..r - half + size)
                .any(|rr| (c2 - half..c - half + size).any(|cc| scheme.is_water(lc.get(rr, cc))));
            if !has_water {
                continue;
            }
            let a = predict(&extract_patch(world, lc.cell_center(r, c), size)?)?;
            let b = predict(&extract_patch(world, lc.cell_center(r2, c2), size)?)?;
            out.push(OverlapTrial { overlap, row: r, col: c, agreement: consistency_agreement(&a, &b)? });
            placed += 1;
        }
    }
    Ok(out)
}

/// Mean agreement per overlap size, in the order the sizes first appear.
pub fn mean_by_overlap(trials: &[OverlapTrial]) -> Vec<(usize, f64)> {
    let mut sizes: Vec<usize> = Vec::new();
    for t in trials {
        if !sizes.contains(&t.overlap) {
            sizes.push(t.overlap);
        }
    }
    sizes
        .into_iter()
        .map(|o| {
            let v: Vec<f64> = trials.iter().filter(|t| t.overlap == o).map(|t| t.agreement).collect();
            (o, v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect()
}
