//! Confusion-matrix metrics, one-vs-rest per class plus unweighted macro means.

use serde::{Deserialize, Serialize};

use crate::error::OffenderList;
use crate::labeling::SamplePoint;
use crate::raster::RasterGrid;
use crate::{Error, Result};

/// `counts[truth * k + pred]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Confusion {
    pub k: usize,
    pub counts: Vec<u64>,
}

impl Confusion {
    pub fn new(k: usize) -> Self {
        Self { k, counts: vec![0; k * k] }
    }

    pub fn add(&mut self, truth: u8, pred: u8) {
        self.counts[truth as usize * self.k + pred as usize] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `(tp, fp, fn, tn)` for class `c` against the rest.
    pub fn one_vs_rest(&self, c: usize) -> (u64, u64, u64, u64) {
        let k = self.k;
        let tp = self.counts[c * k + c];
        let fp: u64 = (0..k).filter(|t| *t != c).map(|t| self.counts[t * k + c]).sum();
        let fn_: u64 = (0..k).filter(|p| *p != c).map(|p| self.counts[c * k + p]).sum();
        (tp, fp, fn_, self.total() - tp - fp - fn_)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub accuracy: f64,
    pub iou: f64,
    pub fscore: f64,
    pub precision: f64,
    pub recall: f64,
}

impl ClassMetrics {
    /// A class that is neither present nor predicted scores 1 everywhere;
    /// otherwise an empty denominator scores 0.
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        if tp + fp + fn_ == 0 {
            let accuracy = if tn > 0 { 1.0 } else { 0.0 };
            return Self { accuracy, iou: 1.0, fscore: 1.0, precision: 1.0, recall: 1.0 };
        }
        Self {
            accuracy: ratio(tp + tn, tp + fp + fn_ + tn),
            iou: ratio(tp, tp + fp + fn_),
            fscore: ratio(2 * tp, 2 * tp + fp + fn_),
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(rename = "macro")]
    pub macro_avg: ClassMetrics,
    pub per_class: Vec<ClassMetrics>,
    pub support: Vec<u64>,
}

impl MetricReport {
    pub fn from_confusion(cm: &Confusion) -> Self {
        let per_class: Vec<ClassMetrics> = (0..cm.k)
            .map(|c| {
                let (tp, fp, fn_, tn) = cm.one_vs_rest(c);
                ClassMetrics::from_counts(tp, fp, fn_, tn)
            })
            .collect();
        let n = per_class.len() as f64;
        let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / n;
        let macro_avg = ClassMetrics {
            accuracy: mean(|m| m.accuracy),
            iou: mean(|m| m.iou),
            fscore: mean(|m| m.fscore),
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
        };
        let support = (0..cm.k).map(|c| (0..cm.k).map(|p| cm.counts[c * cm.k + p]).sum()).collect();
        Self { macro_avg, per_class, support }
    }

    pub fn from_pairs(truth: &[u8], pred: &[u8], k: usize) -> Self {
        let mut cm = Confusion::new(k);
        for (t, p) in truth.iter().zip(pred) {
            cm.add(*t, *p);
        }
        Self::from_confusion(&cm)
    }

    /// CSV with a `macro` row then one row per class.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("scope,accuracy,iou,fscore,precision,recall,support\n");
        let total: u64 = self.support.iter().sum();
        let row = |s: &mut String, name: &str, m: &ClassMetrics, n: u64| {
            s.push_str(&format!("{name},{},{},{},{},{},{n}\n", m.accuracy, m.iou, m.fscore, m.precision, m.recall));
        };
        row(&mut s, "macro", &self.macro_avg, total);
        for (c, m) in self.per_class.iter().enumerate() {
            row(&mut s, &format!("class_{c}"), m, self.support[c]);
        }
        s
    }
}

/// Scores each sample against the prediction raster paired with it.
///
/// Every sample must fall on a predicted (non-nodata) cell of its raster.
pub fn sample_point_metrics(pairs: &[(&RasterGrid, &SamplePoint)], num_classes: usize) -> Result<MetricReport> {
    let mut cm = Confusion::new(num_classes);
    let mut offenders = Vec::new();
    for (pred, s) in pairs {
        let v = pred.cell_of(s.location.0, s.location.1).map(|(r, c)| pred.get(r, c));
        match v {
            Some(v) if !pred.is_nodata(v) && v >= 0.0 && (v as usize) < num_classes => {
                if s.label as usize >= num_classes {
                    return Err(Error::Invalid(format!("sample `{}` has label {} outside {num_classes} classes", s.id, s.label)));
                }
                cm.add(s.label, v as u8)
            }
            _ => offenders.push(s.id.clone()),
        }
    }
    if !offenders.is_empty() {
        return Err(Error::OffWater(OffenderList(offenders)));
    }
    Ok(MetricReport::from_confusion(&cm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeling::{Compound, LabelMode};

    #[test]
    fn hand_confusion_example() {
        let truth = [vec![1u8; 5], vec![0u8; 5]].concat();
        let pred = [vec![1, 1, 1, 0, 0], vec![1, 0, 0, 0, 0]].concat();
        let r = MetricReport::from_pairs(&truth, &pred, 2);
        let c1 = r.per_class[1];
        assert_eq!(c1.precision, 0.75);
        assert_eq!(c1.recall, 0.6);
        assert!((c1.fscore - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(c1.iou, 0.5);
        assert_eq!(c1.accuracy, 0.7);
        assert_eq!(r.macro_avg.accuracy, 0.7);
        assert_eq!(r.support, vec![5, 5]);
        let mean_f = (r.per_class[0].fscore + r.per_class[1].fscore) / 2.0;
        assert_eq!(r.macro_avg.fscore, mean_f);
    }

    #[test]
    fn perfect_and_flipped() {
        let truth = [0u8, 1, 1, 0, 1];
        let r = MetricReport::from_pairs(&truth, &truth, 2);
        assert_eq!(r.macro_avg, ClassMetrics { accuracy: 1.0, iou: 1.0, fscore: 1.0, precision: 1.0, recall: 1.0 });
        let flipped: Vec<u8> = truth.iter().map(|t| 1 - t).collect();
        let r = MetricReport::from_pairs(&truth, &flipped, 2);
        assert_eq!(r.macro_avg, ClassMetrics { accuracy: 0.0, iou: 0.0, fscore: 0.0, precision: 0.0, recall: 0.0 });
    }

    fn sample(id: &str, at: (f64, f64), hi_above: bool) -> SamplePoint {
        let conc = if hi_above { 2.0 } else { 0.5 };
        SamplePoint::new(id, at, 2020, vec![Compound { name: "PFOS".into(), concentration: conc, threshold: 1.0, mdl: 0.1 }], LabelMode::Binary)
            .unwrap()
    }

    #[test]
    fn sample_points_and_offenders() {
        let mut pred = RasterGrid::new(3, 3, 30.0, (0.0, 90.0), 1.0).unwrap();
        pred.set(2, 2, pred.nodata);
        let a = sample("a", (15.0, 75.0), true);
        let b = sample("b", (45.0, 45.0), false);
        let r = sample_point_metrics(&[(&pred, &a), (&pred, &b)], 2).unwrap();
        assert_eq!(r.per_class[1].precision, 0.5);
        let off = sample("off", (75.0, 15.0), true);
        let outside = sample("outside", (500.0, 15.0), true);
        match sample_point_metrics(&[(&pred, &a), (&pred, &off), (&pred, &outside)], 2) {
            Err(Error::OffWater(list)) => assert_eq!(list.0, vec!["off".to_string(), "outside".to_string()]),
            other => panic!("{other:?}"),
        }
    }
}
