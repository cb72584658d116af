use super::RasterGrid;

/// Burns points into a 0/1 grid shaped like `template`.
///
/// Returns the grid and the number of points that fell outside it.
pub fn rasterize_points(points: &[(f64, f64)], template: &RasterGrid) -> (RasterGrid, usize) {
    let mut out = template.like(0.0);
    let mut dropped = 0;
    for &(e, n) in points {
        match out.cell_of(e, n) {
            Some((r, c)) => out.set(r, c, 1.0),
            None => dropped += 1,
        }
    }
    (out, dropped)
}
