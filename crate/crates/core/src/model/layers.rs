//! Channel-major (C×H×W) feature-map primitives with hand-written backward passes.

/// 3×3 convolution, stride 1, zero padding 1. `weight` is `cout×cin×3×3`.
pub fn conv3x3(input: &[f64], cin: usize, h: usize, w: usize, weight: &[f64], bias: &[f64], cout: usize) -> Vec<f64> {
    let plane = h * w;
    debug_assert_eq!(input.len(), cin * plane);
    debug_assert_eq!(weight.len(), cout * cin * 9);
    let mut out = vec![0.0; cout * plane];
    for co in 0..cout {
        let dst = &mut out[co * plane..(co + 1) * plane];
        dst.fill(bias[co]);
        for ci in 0..cin {
            let src = &input[ci * plane..(ci + 1) * plane];
            let k = &weight[(co * cin + ci) * 9..(co * cin + ci + 1) * 9];
            for (tap, &wv) in k.iter().enumerate() {
                let (dy, dx) = (tap as isize / 3 - 1, tap as isize % 3 - 1);
                let (x0, x1) = ((-dx).max(0) as usize, (w as isize - dx.max(0)) as usize);
                let (y0, y1) = ((-dy).max(0) as usize, (h as isize - dy.max(0)) as usize);
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    let o = &mut dst[y * w + x0..y * w + x1];
                    let s = &src[sy * w + (x0 as isize + dx) as usize..sy * w + (x1 as isize + dx) as usize];
                    for (a, b) in o.iter_mut().zip(s) {
                        *a += wv * b;
                    }
                }
            }
        }
    }
    out
}

/// Backward of [`conv3x3`]. Accumulates into `dweight`/`dbias`; returns the
/// input gradient when `need_input` is set.
#[allow(clippy::too_many_arguments)]
pub fn conv3x3_backward(
    input: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    cout: usize,
    dout: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
    need_input: bool,
) -> Option<Vec<f64>> {
    let plane = h * w;
    let mut din = if need_input { vec![0.0; cin * plane] } else { Vec::new() };
    for co in 0..cout {
        let g = &dout[co * plane..(co + 1) * plane];
        dbias[co] += g.iter().sum::<f64>();
        for ci in 0..cin {
            let src = &input[ci * plane..(ci + 1) * plane];
            let base = (co * cin + ci) * 9;
            for tap in 0..9 {
                let (dy, dx) = (tap as isize / 3 - 1, tap as isize % 3 - 1);
                let (x0, x1) = ((-dx).max(0) as usize, (w as isize - dx.max(0)) as usize);
                let (y0, y1) = ((-dy).max(0) as usize, (h as isize - dy.max(0)) as usize);
                let wv = weight[base + tap];
                let mut acc = 0.0;
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    let gr = &g[y * w + x0..y * w + x1];
                    let sx0 = (x0 as isize + dx) as usize;
                    let sr = &src[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                    for (a, b) in gr.iter().zip(sr) {
                        acc += a * b;
                    }
                    if need_input {
                        let dr = &mut din[ci * plane + sy * w + sx0..ci * plane + sy * w + sx0 + (x1 - x0)];
                        for (d, a) in dr.iter_mut().zip(gr) {
                            *d += wv * a;
                        }
                    }
                }
                dweight[base + tap] += acc;
            }
        }
    }
    need_input.then_some(din)
}

/// Per-cell linear map, `weight` is `cout×cin`.
pub fn conv1x1(input: &[f64], cin: usize, plane: usize, weight: &[f64], bias: &[f64], cout: usize) -> Vec<f64> {
    let mut out = vec![0.0; cout * plane];
    for co in 0..cout {
        let dst = &mut out[co * plane..(co + 1) * plane];
        dst.fill(bias[co]);
        for ci in 0..cin {
            let wv = weight[co * cin + ci];
            for (a, b) in dst.iter_mut().zip(&input[ci * plane..(ci + 1) * plane]) {
                *a += wv * b;
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn conv1x1_backward(
    input: &[f64],
    cin: usize,
    plane: usize,
    weight: &[f64],
    cout: usize,
    dout: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let mut din = vec![0.0; cin * plane];
    for co in 0..cout {
        let g = &dout[co * plane..(co + 1) * plane];
        dbias[co] += g.iter().sum::<f64>();
        for ci in 0..cin {
            let src = &input[ci * plane..(ci + 1) * plane];
            dweight[co * cin + ci] += g.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
            let wv = weight[co * cin + ci];
            for (d, a) in din[ci * plane..(ci + 1) * plane].iter_mut().zip(g) {
                *d += wv * a;
            }
        }
    }
    din
}

pub fn relu_inplace(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes gradient entries where the ReLU output was not positive.
pub fn relu_backward_inplace(out: &[f64], grad: &mut [f64]) {
    for (g, o) in grad.iter_mut().zip(out) {
        if *o <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2×2 average pooling; `h` and `w` must be even.
pub fn avgpool2(input: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let i = ch * h * w + 2 * y * w + 2 * x;
                out[ch * oh * ow + y * ow + x] = 0.25 * (input[i] + input[i + 1] + input[i + w] + input[i + w + 1]);
            }
        }
    }
    out
}

/// Gradient of [`avgpool2`] for an input of size `h×w`.
pub fn avgpool2_backward(dout: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut din = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                din[ch * h * w + y * w + x] = 0.25 * dout[ch * oh * ow + (y / 2) * ow + x / 2];
            }
        }
    }
    din
}

/// Nearest-neighbour 2× upsampling of a `h×w` map.
pub fn upsample2(input: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                out[ch * oh * ow + y * ow + x] = input[ch * h * w + (y / 2) * w + x / 2];
            }
        }
    }
    out
}

/// Gradient of [`upsample2`] for an input of size `h×w`.
pub fn upsample2_backward(dout: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let ow = 2 * w;
    let mut din = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..2 * h {
            for x in 0..ow {
                din[ch * h * w + (y / 2) * w + x / 2] += dout[ch * 4 * h * w + y * ow + x];
            }
        }
    }
    din
}

/// Softmax over channels at every cell.
pub fn softmax_channels(logits: &[f64], k: usize, plane: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * plane];
    for i in 0..plane {
        let m = (0..k).map(|c| logits[c * plane + i]).fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for c in 0..k {
            let e = (logits[c * plane + i] - m).exp();
            out[c * plane + i] = e;
            s += e;
        }
        for c in 0..k {
            out[c * plane + i] /= s;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_conv(input: &[f64], cin: usize, h: usize, w: usize, weight: &[f64], bias: &[f64], cout: usize) -> Vec<f64> {
        let mut out = vec![0.0; cout * h * w];
        for co in 0..cout {
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let mut s = bias[co];
                    for ci in 0..cin {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (sy, sx) = (y + ky - 1, x + kx - 1);
                                if sy >= 0 && sx >= 0 && sy < h as isize && sx < w as isize {
                                    s += weight[((co * cin + ci) * 3 + ky as usize) * 3 + kx as usize]
                                        * input[ci * h * w + sy as usize * w + sx as usize];
                                }
                            }
                        }
                    }
                    out[co * h * w + y as usize * w + x as usize] = s;
                }
            }
        }
        out
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (cin, cout, h, w) = (3, 4, 5, 7);
        let x = rand_vec(&mut rng, cin * h * w);
        let k = rand_vec(&mut rng, cout * cin * 9);
        let b = rand_vec(&mut rng, cout);
        let fast = conv3x3(&x, cin, h, w, &k, &b, cout);
        let slow = naive_conv(&x, cin, h, w, &k, &b, cout);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_backward_is_the_adjoint() {
        // <conv(x), g> is linear in x and in the weights, so both gradients can be
        // checked exactly against a dot-product identity.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (cin, cout, h, w) = (2, 3, 6, 4);
        let x = rand_vec(&mut rng, cin * h * w);
        let k = rand_vec(&mut rng, cout * cin * 9);
        let zero_b = vec![0.0; cout];
        let g = rand_vec(&mut rng, cout * h * w);
        let mut dk = vec![0.0; k.len()];
        let mut db = vec![0.0; cout];
        let dx = conv3x3_backward(&x, cin, h, w, &k, cout, &g, &mut dk, &mut db, true).unwrap();
        let y = conv3x3(&x, cin, h, w, &k, &zero_b, cout);
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let via_x: f64 = dx.iter().zip(&x).map(|(a, b)| a * b).sum();
        let via_k: f64 = dk.iter().zip(&k).map(|(a, b)| a * b).sum();
        assert!((lhs - via_x).abs() < 1e-10);
        assert!((lhs - via_k).abs() < 1e-10);
        for co in 0..cout {
            let s: f64 = g[co * h * w..(co + 1) * h * w].iter().sum();
            assert!((db[co] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn pooling_and_upsampling_adjoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (c, h, w) = (2, 4, 6);
        let x = rand_vec(&mut rng, c * h * w);
        let g = rand_vec(&mut rng, c * h * w / 4);
        let lhs: f64 = avgpool2(&x, c, h, w).iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = avgpool2_backward(&g, c, h, w).iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);

        let small = rand_vec(&mut rng, c * 2 * 3);
        let big_g = rand_vec(&mut rng, c * 4 * 6);
        let lhs: f64 = upsample2(&small, c, 2, 3).iter().zip(&big_g).map(|(a, b)| a * b).sum();
        let rhs: f64 = upsample2_backward(&big_g, c, 2, 3).iter().zip(&small).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn conv1x1_adjoint_and_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (cin, cout, plane) = (3, 2, 10);
        let x = rand_vec(&mut rng, cin * plane);
        let k = rand_vec(&mut rng, cout * cin);
        let g = rand_vec(&mut rng, cout * plane);
        let y = conv1x1(&x, cin, plane, &k, &[0.0; 2], cout);
        let mut dk = vec![0.0; k.len()];
        let mut db = vec![0.0; cout];
        let dx = conv1x1_backward(&x, cin, plane, &k, cout, &g, &mut dk, &mut db);
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        assert!((lhs - dx.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>()).abs() < 1e-12);
        assert!((lhs - dk.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>()).abs() < 1e-12);

        let p = softmax_channels(&[1000.0, 0.0, -1000.0, 0.0], 2, 2);
        assert_eq!(p, vec![1.0, 0.5, 0.0, 0.5]);
    }
}
