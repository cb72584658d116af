//! Seeded value noise with fractal octaves.

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform value in [0, 1) attached to a lattice point.
fn lattice(seed: u64, octave: u32, x: i64, y: i64) -> f64 {
    let h = splitmix64(seed ^ splitmix64((octave as u64) << 48 ^ splitmix64(x as u64 ^ splitmix64(y as u64))));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn value_noise(seed: u64, octave: u32, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (tx, ty) = (smooth(x - x0), smooth(y - y0));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let v00 = lattice(seed, octave, ix, iy);
    let v10 = lattice(seed, octave, ix + 1, iy);
    let v01 = lattice(seed, octave, ix, iy + 1);
    let v11 = lattice(seed, octave, ix + 1, iy + 1);
    let a = v00 + (v10 - v00) * tx;
    let b = v01 + (v11 - v01) * tx;
    a + (b - a) * ty
}

/// Sum of `octaves` value-noise layers, the first with lattice spacing
/// `wavelength` cells, each next at half the spacing and half the amplitude.
/// Normalized to [0, 1].
pub fn fbm(seed: u64, row: usize, col: usize, wavelength: f64, octaves: u32) -> f64 {
    let (mut amp, mut freq, mut sum, mut norm) = (1.0, 1.0 / wavelength, 0.0, 0.0);
    for o in 0..octaves {
        sum += amp * value_noise(seed, o, col as f64 * freq, row as f64 * freq);
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    sum / norm
}

/// Noise field over a `size × size` grid, row-major.
pub fn fbm_field(seed: u64, size: usize, wavelength: f64, octaves: u32) -> Vec<f64> {
    let mut out = Vec::with_capacity(size * size);
    for r in 0..size {
        for c in 0..size {
            out.push(fbm(seed, r, c, wavelength, octaves));
        }
    }
    out
}
