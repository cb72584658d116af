use super::RasterGrid;

/// Output of [`distance_transform`].
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceRaster {
    /// Meters from each cell center to the nearest source cell center.
    pub grid: RasterGrid,
    /// Set when the source had no cells equal to 1; every cell is nodata then.
    pub no_sources: bool,
}

/// Exact Euclidean distance transform.
///
/// Cells equal to 1 are sources. Uses the separable lower-envelope algorithm on
/// squared distances: one pass down the columns, one across the rows.
pub fn distance_transform(source: &RasterGrid) -> DistanceRaster {
    let (w, h) = (source.width, source.height);
    if !source.values.iter().any(|v| *v == 1.0) {
        let grid = source.like(source.nodata);
        return DistanceRaster { grid, no_sources: true };
    }
    let inf = ((w * w + h * h) as f64 + 1.0) * 4.0;
    let mut sq: Vec<f64> = source.values.iter().map(|v| if *v == 1.0 { 0.0 } else { inf }).collect();

    let n = w.max(h);
    let mut f = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];

    for c in 0..w {
        for r in 0..h {
            f[r] = sq[r * w + c];
        }
        envelope_1d(&f[..h], &mut d[..h], &mut v, &mut z);
        for r in 0..h {
            sq[r * w + c] = d[r];
        }
    }
    for r in 0..h {
        f[..w].copy_from_slice(&sq[r * w..(r + 1) * w]);
        envelope_1d(&f[..w], &mut d[..w], &mut v, &mut z);
        sq[r * w..(r + 1) * w].copy_from_slice(&d[..w]);
    }

    let cs = source.cell_size;
    let mut grid = source.like(0.0);
    for (o, s) in grid.values.iter_mut().zip(&sq) {
        *o = s.sqrt() * cs;
    }
    DistanceRaster { grid, no_sources: false }
}

/// Abscissa where the parabolas rooted at `p` and `q` intersect.
#[inline]
fn parabola_cut(f: &[f64], p: usize, q: usize) -> f64 {
    let (pf, qf) = (p as f64, q as f64);
    ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * qf - 2.0 * pf)
}

/// 1-D squared distance transform of the sampled function `f`
/// (lower envelope of parabolas rooted at each sample).
fn envelope_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s = parabola_cut(f, v[k], q);
        while s <= z[k] {
            k -= 1;
            s = parabola_cut(f, v[k], q);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let dq = q as f64 - v[k] as f64;
        d[q] = dq * dq + f[v[k]];
    }
}
