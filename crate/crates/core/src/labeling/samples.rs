use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::LabelMode;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Compound {
    pub name: String,
    /// ng/g or ng/L, same unit as threshold and mdl.
    pub concentration: f64,
    pub threshold: f64,
    /// Method detection limit.
    pub mdl: f64,
}

impl Compound {
    /// Below the detection limit: the assay reports it absent.
    pub fn non_detect(&self) -> bool {
        self.concentration < self.mdl
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePoint {
    pub id: String,
    /// (easting, northing) in meters.
    pub location: (f64, f64),
    pub year: i32,
    pub compounds: Vec<Compound>,
    pub hazard_index: f64,
    pub label: u8,
}

impl SamplePoint {
    /// Builds a sample, deriving the hazard index and label from the compounds.
    pub fn new(
        id: impl Into<String>,
        location: (f64, f64),
        year: i32,
        compounds: Vec<Compound>,
        mode: LabelMode,
    ) -> Result<Self> {
        let hi = hazard_index(&compounds)?;
        Ok(Self { id: id.into(), location, year, compounds, hazard_index: hi, label: classify_sample(hi, mode) })
    }

    /// Multiplier applied to a below-threshold sample's confidence when some
    /// compound went undetected: the smallest `min(1, threshold / mdl)` over
    /// non-detected compounds, or 1.
    pub fn mdl_multiplier(&self) -> f64 {
        self.compounds
            .iter()
            .filter(|c| c.non_detect())
            .map(|c| (c.threshold / c.mdl).min(1.0))
            .fold(1.0, f64::min)
    }
}

/// Sum of concentration-to-threshold ratios.
pub fn hazard_index(compounds: &[Compound]) -> Result<f64> {
    if compounds.is_empty() {
        return Err(Error::Invalid("hazard index of an empty compound list".into()));
    }
    let mut hi = 0.0;
    for c in compounds {
        if !(c.threshold > 0.0) || c.concentration < 0.0 || c.mdl < 0.0 {
            return Err(Error::Invalid(format!(
                "compound `{}` needs threshold > 0 and nonnegative concentration/MDL",
                c.name
            )));
        }
        hi += c.concentration / c.threshold;
    }
    Ok(hi)
}

/// Binary: 1 iff HI ≥ 1. Ternary: 0 below 1, 1 on [1, 1000], 2 above 1000.
pub fn classify_sample(hi: f64, mode: LabelMode) -> u8 {
    match mode {
        LabelMode::Binary => u8::from(hi >= 1.0),
        LabelMode::Ternary => {
            if hi < 1.0 {
                0
            } else if hi <= 1000.0 {
                1
            } else {
                2
            }
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    id: String,
    easting: f64,
    northing: f64,
    year: i32,
    compound: String,
    concentration: f64,
    threshold: f64,
    mdl: f64,
}

/// One row per compound per sample.
pub fn write_samples_csv<W: Write>(samples: &[SamplePoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for s in samples {
        for c in &s.compounds {
            w.serialize(Row {
                id: s.id.clone(),
                easting: s.location.0,
                northing: s.location.1,
                year: s.year,
                compound: c.name.clone(),
                concentration: c.concentration,
                threshold: c.threshold,
                mdl: c.mdl,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Groups rows by sample id, keeping first-appearance order.
pub fn read_samples_csv<R: Read>(input: R, mode: LabelMode) -> Result<Vec<SamplePoint>> {
    let mut r = csv::Reader::from_reader(input);
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, (f64, f64, i32, Vec<Compound>)> = HashMap::new();
    for row in r.deserialize() {
        let row: Row = row?;
        let entry = groups.entry(row.id.clone()).or_insert_with(|| {
            order.push(row.id.clone());
            (row.easting, row.northing, row.year, Vec::new())
        });
        if (entry.0, entry.1) != (row.easting, row.northing) {
            return Err(Error::Invalid(format!("sample `{}` has inconsistent coordinates", row.id)));
        }
        entry.3.push(Compound {
            name: row.compound,
            concentration: row.concentration,
            threshold: row.threshold,
            mdl: row.mdl,
        });
    }
    order
        .into_iter()
        .map(|id| {
            let (e, n, year, compounds) = groups.remove(&id).expect("grouped");
            SamplePoint::new(id, (e, n), year, compounds, mode)
        })
        .collect()
}
