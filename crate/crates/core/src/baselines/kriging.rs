//! Ordinary Kriging with an empirical semivariogram and a spherical model
//! fitted by pair-count weighted least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariogramForm {
    Spherical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramModel {
    pub nugget: f64,
    pub sill: f64,
    /// Meters.
    pub range: f64,
    pub form: VariogramForm,
}

/// Spherical shape on `[0, 1]`, 1 beyond.
fn spherical_shape(h: f64, a: f64) -> f64 {
    if h >= a {
        1.0
    } else {
        let t = h / a;
        1.5 * t - 0.5 * t * t * t
    }
}

impl VariogramModel {
    pub fn spherical(nugget: f64, sill: f64, range: f64) -> Result<Self> {
        let m = Self { nugget, sill, range, form: VariogramForm::Spherical };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nugget >= 0.0 && self.sill >= self.nugget && self.range > 0.0) {
            return Err(Error::Invalid(format!(
                "variogram needs 0 ≤ nugget ≤ sill and range > 0, got nugget {} sill {} range {}",
                self.nugget, self.sill, self.range
            )));
        }
        Ok(())
    }

    /// Semivariance at lag `h`; zero at `h = 0`, the nugget applies for `h > 0`.
    pub fn gamma(&self, h: f64) -> f64 {
        if h <= 0.0 {
            return 0.0;
        }
        self.nugget + (self.sill - self.nugget) * spherical_shape(h, self.range)
    }

    /// Covariance `sill − γ(h)`.
    pub fn covariance(&self, h: f64) -> f64 {
        self.sill - self.gamma(h)
    }

    /// Covariance between two distinct observations: the nugget applies even
    /// when they share a location.
    fn covariance_distinct(&self, h: f64) -> f64 {
        self.sill - (self.nugget + (self.sill - self.nugget) * spherical_shape(h, self.range))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramBin {
    /// Mean pair distance, or the bin midpoint when empty.
    pub lag: f64,
    pub semivariance: f64,
    pub count: usize,
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Half the mean squared difference of all pairs whose distance falls in
/// `[edges[i], edges[i+1])`.
pub fn empirical_semivariogram(points: &[(f64, f64)], values: &[f64], bin_edges: &[f64]) -> Result<Vec<VariogramBin>> {
    if points.len() < 2 || points.len() != values.len() {
        return Err(Error::Invalid("need at least two points with one value each".into()));
    }
    if bin_edges.len() < 2 || bin_edges.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Invalid("bin edges must be strictly increasing with at least two entries".into()));
    }
    let nb = bin_edges.len() - 1;
    let mut sum_sq = vec![0.0; nb];
    let mut sum_d = vec![0.0; nb];
    let mut count = vec![0usize; nb];
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = dist(points[i], points[j]);
            if d < bin_edges[0] || d >= bin_edges[nb] {
                continue;
            }
            let b = bin_edges.partition_point(|e| *e <= d) - 1;
            sum_sq[b] += (values[i] - values[j]).powi(2);
            sum_d[b] += d;
            count[b] += 1;
        }
    }
    Ok((0..nb)
        .map(|b| {
            if count[b] == 0 {
                VariogramBin { lag: 0.5 * (bin_edges[b] + bin_edges[b + 1]), semivariance: 0.0, count: 0 }
            } else {
                let m = count[b] as f64;
                VariogramBin { lag: sum_d[b] / m, semivariance: sum_sq[b] / (2.0 * m), count: count[b] }
            }
        })
        .collect())
}

/// Pair-count weighted sum of squared residuals.
pub fn weighted_sse(model: &VariogramModel, emp: &[VariogramBin]) -> f64 {
    emp.iter().map(|b| b.count as f64 * (model.gamma(b.lag) - b.semivariance).powi(2)).sum()
}

/// Best nonnegative (nugget, partial sill) for a fixed range: a two-parameter
/// weighted linear fit with the constraints checked on the boundary.
fn fit_fixed_range(bins: &[VariogramBin], a: f64) -> (f64, f64, f64) {
    let (mut sw, mut sf, mut sff, mut sy, mut sfy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for b in bins {
        let (w, f, y) = (b.count as f64, spherical_shape(b.lag, a), b.semivariance);
        sw += w;
        sf += w * f;
        sff += w * f * f;
        sy += w * y;
        sfy += w * f * y;
    }
    let sse = |n: f64, p: f64| -> f64 {
        bins.iter().map(|b| b.count as f64 * (n + p * spherical_shape(b.lag, a) - b.semivariance).powi(2)).sum()
    };
    let mut candidates = Vec::new();
    let det = sw * sff - sf * sf;
    if det.abs() > 1e-12 * sw * sff.max(1e-300) {
        let n = (sff * sy - sf * sfy) / det;
        let p = (sw * sfy - sf * sy) / det;
        if n >= 0.0 && p >= 0.0 {
            candidates.push((n, p));
        }
    }
    if sff > 0.0 {
        candidates.push((0.0, (sfy / sff).max(0.0)));
    }
    candidates.push(((sy / sw).max(0.0), 0.0));
    candidates
        .into_iter()
        .map(|(n, p)| (n, p, sse(n, p)))
        .fold((0.0, 0.0, f64::INFINITY), |best, c| if c.2 < best.2 { c } else { best })
}

/// Weighted least-squares spherical fit over the nonempty bins.
///
/// The range is located by a log-spaced scan and golden-section refinement
/// (nugget and sill are linear given the range), then all three parameters
/// are polished with damped Gauss-Newton steps.
pub fn fit_spherical(emp: &[VariogramBin]) -> Result<VariogramModel> {
    let bins: Vec<VariogramBin> = emp.iter().filter(|b| b.count > 0).copied().collect();
    if bins.len() < 3 {
        return Err(Error::Invalid(format!("spherical fit needs ≥ 3 nonempty bins, got {}", bins.len())));
    }
    let max_lag = bins.iter().map(|b| b.lag).fold(0.0, f64::max);
    let min_lag = bins.iter().map(|b| b.lag).filter(|l| *l > 0.0).fold(f64::INFINITY, f64::min);
    if bins.iter().all(|b| b.semivariance == 0.0) || !(max_lag > 0.0) {
        return Ok(VariogramModel { nugget: 0.0, sill: 0.0, range: max_lag.max(f64::MIN_POSITIVE), form: VariogramForm::Spherical });
    }

    let (lo, hi) = (0.5 * min_lag, 2.0 * max_lag);
    let n_scan = 400;
    let range_at = |i: f64| lo * (hi / lo).powf(i / n_scan as f64);
    let mut best_i = 0;
    let mut best = f64::INFINITY;
    for i in 0..=n_scan {
        let e = fit_fixed_range(&bins, range_at(i as f64)).2;
        if e < best {
            best = e;
            best_i = i;
        }
    }
    // golden section on log-range inside the bracketing scan cells
    let (mut a, mut b) = ((best_i as f64 - 1.0).max(0.0), (best_i as f64 + 1.0).min(n_scan as f64));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let f = |i: f64| fit_fixed_range(&bins, range_at(i)).2;
    let (mut x1, mut x2) = (b - g * (b - a), a + g * (b - a));
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..100 {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        }
    }
    let mut range = range_at(0.5 * (a + b));
    let (mut nugget, mut psill, mut sse) = fit_fixed_range(&bins, range);
    if sse > best {
        range = range_at(best_i as f64);
        (nugget, psill, sse) = fit_fixed_range(&bins, range);
    }

    // Gauss-Newton polish on (nugget, partial sill, range)
    for _ in 0..50 {
        let mut jtj = [[0.0f64; 3]; 3];
        let mut jtr = [0.0f64; 3];
        for bin in &bins {
            let (w, h) = (bin.count as f64, bin.lag);
            let model = nugget + psill * spherical_shape(h, range);
            let r = bin.semivariance - model;
            let dr = if h < range { psill * (-1.5 * h / (range * range) + 1.5 * h.powi(3) / range.powi(4)) } else { 0.0 };
            let jrow = [1.0, spherical_shape(h, range), dr];
            for p in 0..3 {
                jtr[p] += w * jrow[p] * r;
                for q in 0..3 {
                    jtj[p][q] += w * jrow[p] * jrow[q];
                }
            }
        }
        let m = DMatrix::from_fn(3, 3, |i, j| jtj[i][j] + if i == j { 1e-12 * jtj[i][i].abs() } else { 0.0 });
        let Some(step) = m.lu().solve(&DVector::from_row_slice(&jtr)) else { break };
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let (n2, p2, a2) = (nugget + t * step[0], psill + t * step[1], range + t * step[2]);
            if n2 >= 0.0 && p2 >= 0.0 && a2 > 0.0 {
                let cand = VariogramModel { nugget: n2, sill: n2 + p2, range: a2, form: VariogramForm::Spherical };
                let e = weighted_sse(&cand, &bins);
                if e < sse {
                    (nugget, psill, range, sse) = (n2, p2, a2, e);
                    improved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok(VariogramModel { nugget, sill: nugget + psill, range, form: VariogramForm::Spherical })
}

/// Factorized ordinary Kriging system for a fixed training set.
#[derive(Debug, Clone)]
pub struct OrdinaryKriging {
    points: Vec<(f64, f64)>,
    values: Vec<f64>,
    model: VariogramModel,
    lu: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

/// Kriging output at one query point.
#[derive(Debug, Clone, PartialEq)]
pub struct KrigingEstimate {
    pub estimate: f64,
    pub variance: f64,
    pub weights: Vec<f64>,
}

impl OrdinaryKriging {
    /// Builds and factorizes `[[C, 1], [1ᵀ, 0]]` with `C_ij = sill − γ(d_ij)`.
    ///
    /// A zero-sill model carries no spatial structure; it predicts the mean.
    pub fn new(points: &[(f64, f64)], values: &[f64], model: VariogramModel) -> Result<Self> {
        model.validate()?;
        if points.is_empty() || points.len() != values.len() {
            return Err(Error::Invalid("kriging needs at least one point with one value each".into()));
        }
        let n = points.len();
        let lu = if model.sill > 0.0 {
            let mut a = DMatrix::zeros(n + 1, n + 1);
            for i in 0..n {
                for j in 0..n {
                    let d = dist(points[i], points[j]);
                    a[(i, j)] = if i == j { model.sill } else { model.covariance_distinct(d) };
                }
                a[(i, n)] = 1.0;
                a[(n, i)] = 1.0;
            }
            let lu = a.lu();
            let diag: Vec<f64> = lu.u().diagonal().iter().map(|v| v.abs()).collect();
            let max = diag.iter().cloned().fold(0.0, f64::max);
            let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
            if !(min > 1e-12 * max) {
                return Err(Error::Singular(format!("pivot ratio {:.3e}", min / max)));
            }
            Some(lu)
        } else {
            None
        };
        Ok(Self { points: points.to_vec(), values: values.to_vec(), model, lu })
    }

    pub fn predict(&self, query: (f64, f64)) -> Result<KrigingEstimate> {
        let n = self.points.len();
        let Some(lu) = &self.lu else {
            let mean = self.values.iter().sum::<f64>() / n as f64;
            return Ok(KrigingEstimate { estimate: mean, variance: 0.0, weights: vec![1.0 / n as f64; n] });
        };
        let mut rhs = DVector::zeros(n + 1);
        for i in 0..n {
            rhs[i] = self.model.covariance(dist(self.points[i], query));
        }
        rhs[n] = 1.0;
        let sol = lu.solve(&rhs).ok_or_else(|| Error::Singular("solve failed".into()))?;
        let weights: Vec<f64> = sol.iter().take(n).copied().collect();
        let estimate = weights.iter().zip(&self.values).map(|(w, v)| w * v).sum();
        let wc: f64 = (0..n).map(|i| weights[i] * rhs[i]).sum();
        let variance = (self.model.sill - wc - sol[n]).max(0.0);
        Ok(KrigingEstimate { estimate, variance, weights })
    }
}

/// One-shot estimate and Kriging variance at `query`.
pub fn kriging_predict(points: &[(f64, f64)], values: &[f64], model: VariogramModel, query: (f64, f64)) -> Result<(f64, f64)> {
    let k = OrdinaryKriging::new(points, values, model)?.predict(query)?;
    Ok((k.estimate, k.variance))
}

/// Binary class from a Kriging estimate.
pub fn kriging_class(estimate: f64) -> u8 {
    u8::from(estimate >= 0.5)
}
