//! Exhaustive search over noise-mask weightings.

use std::fmt::Write as _;

use serde::Serialize;

use super::MetricReport;
use crate::labeling::NoiseWeights;
use crate::Result;

/// The 24 orderings of the weights {0.4, 0.3, 0.2, 0.1} over
/// (dischargers, land cover, sample distance, downstream).
pub fn default_noise_configs() -> Vec<NoiseWeights> {
    let levels = [0.4, 0.3, 0.2, 0.1];
    let mut out = Vec::with_capacity(24);
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                for d in 0..4 {
                    let mut seen = [false; 4];
                    for i in [a, b, c, d] {
                        seen[i] = true;
                    }
                    if seen.iter().all(|s| *s) {
                        out.push(NoiseWeights {
                            dischargers: levels[a],
                            landcover: levels[b],
                            sample_dist: levels[c],
                            downstream: levels[d],
                        });
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub weights: NoiseWeights,
    pub report: MetricReport,
}

/// Rows sorted by macro F-score, best first; equal scores keep input order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridTable {
    pub rows: Vec<GridRow>,
}

/// Evaluates every configuration with `run` and ranks the results.
pub fn noise_weight_grid_search<F>(configs: &[NoiseWeights], mut run: F) -> Result<GridTable>
where
    F: FnMut(&NoiseWeights) -> Result<MetricReport>,
{
    let mut rows = Vec::with_capacity(configs.len());
    for w in configs {
        w.validate()?;
        rows.push(GridRow { weights: *w, report: run(w)? });
    }
    rows.sort_by(|a, b| b.report.macro_avg.fscore.total_cmp(&a.report.macro_avg.fscore));
    Ok(GridTable { rows })
}

const HEADER: [&str; 9] = ["dischargers", "landcover", "flow_dir", "sample_dist", "iou", "fscore", "precision", "recall", "accuracy"];

impl GridTable {
    fn fields(row: &GridRow) -> [f64; 9] {
        let (w, m) = (&row.weights, &row.report.macro_avg);
        [w.dischargers, w.landcover, w.downstream, w.sample_dist, m.iou, m.fscore, m.precision, m.recall, m.accuracy]
    }

    pub fn to_csv(&self) -> String {
        let mut s = HEADER.join(",");
        s.push('\n');
        for row in &self.rows {
            let f = Self::fields(row).map(|v| format!("{v}"));
            s.push_str(&f.join(","));
            s.push('\n');
        }
        s
    }

    pub fn to_pretty(&self) -> String {
        let mut s = String::new();
        for h in HEADER {
            let _ = write!(s, "{h:>12}");
        }
        s.push('\n');
        for row in &self.rows {
            for (i, v) in Self::fields(row).iter().enumerate() {
                if i < 4 {
                    let _ = write!(s, "{:>11.0}%", v * 100.0);
                } else {
                    let _ = write!(s, "{v:>12.4}");
                }
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twenty_four_distinct_valid_configs() {
        let c = default_noise_configs();
        assert_eq!(c.len(), 24);
        for (i, a) in c.iter().enumerate() {
            a.validate().unwrap();
            assert!(c[i + 1..].iter().all(|b| b != a));
        }
        assert!(c.contains(&NoiseWeights::new(0.4, 0.2, 0.1, 0.3).unwrap()));
    }

    #[test]
    fn ranked_and_deterministic() {
        let configs = default_noise_configs();
        let run = |w: &NoiseWeights| {
            // score favours discharger weight, ties broken by nothing
            let correct = (w.dischargers * 10.0).round() as usize;
            let truth = vec![1u8; 4];
            let pred: Vec<u8> = (0..4).map(|i| u8::from(i < correct)).collect();
            Ok(MetricReport::from_pairs(&truth, &pred, 2))
        };
        let a = noise_weight_grid_search(&configs, run).unwrap();
        let b = noise_weight_grid_search(&configs, run).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 24);
        assert!(a.rows.windows(2).all(|p| p[0].report.macro_avg.fscore >= p[1].report.macro_avg.fscore));
        assert_eq!(a.rows[0].weights.dischargers, 0.4);
        let csv = a.to_csv();
        assert_eq!(csv.lines().count(), 25);
        assert!(csv.starts_with("dischargers,landcover,flow_dir,sample_dist,iou,fscore,precision,recall,accuracy"));
        assert_eq!(a.to_pretty().lines().count(), 25);
    }

    #[test]
    fn invalid_weights_are_rejected() {
        let bad = NoiseWeights { dischargers: 0.5, landcover: 0.5, sample_dist: 0.5, downstream: 0.0 };
        assert!(noise_weight_grid_search(&[bad], |_| unreachable!()).is_err());
    }
}
