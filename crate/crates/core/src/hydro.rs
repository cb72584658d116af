//! D8 routing: flow direction, flow accumulation, downstream traces and slope.
//!
//! Direction codes: 1=E, 2=SE, 4=S, 8=SW, 16=W, 32=NW, 64=N, 128=NE, 0=sink/flat.

use std::collections::VecDeque;

use crate::raster::{Cell, RasterGrid};
use crate::{Error, Result};

/// (code, Δrow, Δcol) in ascending code order; ties in steepest drop go to the
/// first entry.
pub const D8: [(u8, isize, isize); 8] = [
    (1, 0, 1),
    (2, 1, 1),
    (4, 1, 0),
    (8, 1, -1),
    (16, 0, -1),
    (32, -1, -1),
    (64, -1, 0),
    (128, -1, 1),
];

/// All valid codes, sink first.
pub const CODES: [u8; 9] = [0, 1, 2, 4, 8, 16, 32, 64, 128];

pub fn offset(code: u8) -> Option<(isize, isize)> {
    D8.iter().find(|(c, _, _)| *c == code).map(|&(_, dr, dc)| (dr, dc))
}

/// A raster of D8 codes.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowDirGrid(RasterGrid);

impl FlowDirGrid {
    /// Wraps a raster after checking every value is a D8 code. Cells may point
    /// off the grid (patch windows cut from a larger world do); such steps end a
    /// path.
    pub fn from_raster(grid: RasterGrid) -> Result<Self> {
        if let Some(bad) = grid.values.iter().find(|v| code_of(**v).is_none()) {
            return Err(Error::Invalid(format!("{bad} is not a D8 direction code")));
        }
        Ok(Self(grid))
    }

    pub fn grid(&self) -> &RasterGrid {
        &self.0
    }

    pub fn into_grid(self) -> RasterGrid {
        self.0
    }

    #[inline]
    pub fn code(&self, row: usize, col: usize) -> u8 {
        self.0.get(row, col) as u8
    }

    /// Downstream neighbour index; `Err(())` when the step leaves the grid,
    /// `Ok(None)` at sinks.
    #[inline]
    pub fn target(&self, row: usize, col: usize) -> std::result::Result<Option<Cell>, ()> {
        let code = self.code(row, col);
        if code == 0 {
            return Ok(None);
        }
        let (dr, dc) = offset(code).expect("validated code");
        let (r2, c2) = (row as isize + dr, col as isize + dc);
        if self.0.in_bounds(r2, c2) {
            Ok(Some((r2 as usize, c2 as usize)))
        } else {
            Err(())
        }
    }

    /// Copy with cells pointing off the grid recoded as sinks.
    pub fn recode_edges(&self) -> Self {
        let mut g = self.0.clone();
        for r in 0..g.height {
            for c in 0..g.width {
                if self.target(r, c).is_err() {
                    g.set(r, c, 0.0);
                }
            }
        }
        Self(g)
    }
}

fn code_of(v: f64) -> Option<u8> {
    CODES.iter().copied().find(|c| *c as f64 == v)
}

/// Steepest-descent D8 direction for every cell of a DEM.
///
/// The drop rate to a neighbour is the elevation difference divided by the
/// center distance (`cell_size` or `cell_size·√2`). Cells without a strictly
/// lower in-grid neighbour get code 0.
pub fn d8_flow_direction(dem: &RasterGrid) -> Result<FlowDirGrid> {
    if let Some(i) = dem.values.iter().position(|v| dem.is_nodata(*v) || !v.is_finite()) {
        return Err(Error::Invalid(format!("DEM has nodata at index {i}")));
    }
    let (w, h) = (dem.width, dem.height);
    let diag = dem.cell_size * std::f64::consts::SQRT_2;
    let mut out = dem.like(0.0);
    for r in 0..h {
        for c in 0..w {
            let z0 = dem.get(r, c);
            let mut best = 0.0;
            let mut code = 0u8;
            for &(k, dr, dc) in &D8 {
                let (r2, c2) = (r as isize + dr, c as isize + dc);
                if !dem.in_bounds(r2, c2) {
                    continue;
                }
                let dist = if dr != 0 && dc != 0 { diag } else { dem.cell_size };
                let drop = (z0 - dem.get(r2 as usize, c2 as usize)) / dist;
                if drop > best {
                    best = drop;
                    code = k;
                }
            }
            out.set(r, c, code as f64);
        }
    }
    Ok(FlowDirGrid(out))
}

/// Number of upstream cells draining through each cell (the cell itself excluded).
pub fn flow_accumulation(dirs: &FlowDirGrid) -> Result<RasterGrid> {
    let g = dirs.grid();
    let (w, n) = (g.width, g.len());
    let target: Vec<Option<usize>> = (0..n)
        .map(|i| match dirs.target(i / w, i % w) {
            Ok(Some((r, c))) => Some(r * w + c),
            _ => None,
        })
        .collect();
    let mut indeg = vec![0u32; n];
    for t in target.iter().flatten() {
        indeg[*t] += 1;
    }
    let mut acc = vec![0.0f64; n];
    let mut queue: VecDeque<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut done = 0usize;
    while let Some(i) = queue.pop_front() {
        done += 1;
        if let Some(t) = target[i] {
            acc[t] += acc[i] + 1.0;
            indeg[t] -= 1;
            if indeg[t] == 0 {
                queue.push_back(t);
            }
        }
    }
    if done < n {
        // unprocessed cells lie on a cycle or downstream of one; n steps from any
        // of them is guaranteed to land on the cycle
        let mut i = (0..n).find(|&i| indeg[i] > 0).expect("cycle member");
        for _ in 0..n {
            i = target[i].expect("cycle cells have targets");
        }
        return Err(Error::Cycle { row: i / w, col: i % w });
    }
    let mut out = g.like(0.0);
    out.values = acc;
    Ok(out)
}

/// Cells on the D8 path leaving `seed`, seed excluded. The path ends at a sink
/// or at the grid edge.
pub fn downstream_mask(dirs: &FlowDirGrid, seed: Cell) -> Result<RasterGrid> {
    let g = dirs.grid();
    if seed.0 >= g.height || seed.1 >= g.width {
        return Err(Error::Invalid(format!("seed {seed:?} outside {}x{} grid", g.height, g.width)));
    }
    let mut mask = g.like(0.0);
    for cell in downstream_path(dirs, seed)? {
        mask.set(cell.0, cell.1, 1.0);
    }
    Ok(mask)
}

/// Ordered cells of the downstream path from `seed` (seed excluded).
pub fn downstream_path(dirs: &FlowDirGrid, seed: Cell) -> Result<Vec<Cell>> {
    let g = dirs.grid();
    let mut seen = vec![false; g.len()];
    seen[g.index(seed.0, seed.1)] = true;
    let mut path = Vec::new();
    let mut cur = seed;
    while let Ok(Some(next)) = dirs.target(cur.0, cur.1) {
        let i = g.index(next.0, next.1);
        if seen[i] {
            return Err(Error::Cycle { row: next.0, col: next.1 });
        }
        seen[i] = true;
        path.push(next);
        cur = next;
    }
    Ok(path)
}

/// Percent slope from centered differences (one-sided at the edges).
pub fn slope_percent(dem: &RasterGrid) -> RasterGrid {
    let (w, h) = (dem.width, dem.height);
    let mut out = dem.like(0.0);
    let cs = dem.cell_size;
    for r in 0..h {
        for c in 0..w {
            let (cl, cr) = (c.saturating_sub(1), (c + 1).min(w - 1));
            let (ru, rd) = (r.saturating_sub(1), (r + 1).min(h - 1));
            let dx = if cr > cl { (dem.get(r, cr) - dem.get(r, cl)) / ((cr - cl) as f64 * cs) } else { 0.0 };
            let dy = if rd > ru { (dem.get(rd, c) - dem.get(ru, c)) / ((rd - ru) as f64 * cs) } else { 0.0 };
            out.set(r, c, 100.0 * (dx * dx + dy * dy).sqrt());
        }
    }
    out
}
