//! Train/test splits with no overlapping patch windows across the two sets.

use std::io::Write;

use crate::labeling::SamplePoint;
use crate::{Error, Result};

/// Whether the `size_p`-cell windows centered on `a` and `b` intersect.
pub fn windows_overlap(a: (f64, f64), b: (f64, f64), size_p: usize, cell_size: f64) -> bool {
    let dc = ((a.0 - b.0) / cell_size).round().abs();
    let dr = ((a.1 - b.1) / cell_size).round().abs();
    dc < size_p as f64 && dr < size_p as f64
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Splits samples into (train ids, test ids).
///
/// Overlapping windows are joined into connected components, and components
/// are handed out largest first to whichever split is furthest below its
/// target count.
pub fn disjoint_split(
    samples: &[SamplePoint],
    size_p: usize,
    cell_size: f64,
    fractions: (f64, f64),
) -> Result<(Vec<String>, Vec<String>)> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::Split(format!("need at least 2 samples, got {n}")));
    }
    if fractions.0 < 0.0 || fractions.1 < 0.0 || ((fractions.0 + fractions.1) - 1.0).abs() > 1e-9 {
        return Err(Error::Split(format!("fractions {fractions:?} must be nonnegative and sum to 1")));
    }
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            if windows_overlap(samples[i].location, samples[j].location, size_p, cell_size) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut comps: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        let r = find(&mut parent, i);
        comps[r].push(i);
    }
    comps.retain(|c| !c.is_empty());
    comps.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));

    let targets = [fractions.0 * n as f64, fractions.1 * n as f64];
    let mut counts = [0usize; 2];
    let mut side = vec![0u8; n];
    for comp in &comps {
        let k = if targets[0] - counts[0] as f64 >= targets[1] - counts[1] as f64 { 0 } else { 1 };
        counts[k] += comp.len();
        for i in comp {
            side[*i] = k as u8;
        }
    }
    for k in 0..2 {
        if targets[k] > 0.0 && counts[k] == 0 {
            return Err(Error::Split(format!(
                "samples form {} overlap component(s), the largest holding {} of {n}; \
                 no disjoint split reaches fractions {fractions:?}",
                comps.len(),
                comps[0].len()
            )));
        }
    }
    let ids = |k: u8| samples.iter().zip(&side).filter(|(_, s)| **s == k).map(|(p, _)| p.id.clone()).collect();
    Ok((ids(0), ids(1)))
}

/// `id,split` rows.
pub fn write_split_csv<W: Write>(train: &[String], test: &[String], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "split"])?;
    for (ids, name) in [(train, "train"), (test, "test")] {
        for id in ids {
            w.write_record([id.as_str(), name])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads `id,split` rows back into (train ids, test ids).
pub fn read_split_csv<R: std::io::Read>(input: R) -> Result<(Vec<String>, Vec<String>)> {
    let mut r = csv::Reader::from_reader(input);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec?;
        match rec.get(1) {
            Some("train") => train.push(rec[0].to_string()),
            Some("test") => test.push(rec[0].to_string()),
            other => return Err(Error::Format(format!("unknown split {other:?}"))),
        }
    }
    Ok((train, test))
}
