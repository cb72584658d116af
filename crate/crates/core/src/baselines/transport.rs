//! Grid pollutant transport: mass moves along D8 flow directions according to
//! per-cell infiltration and runoff fractions from a hydrologic response unit
//! table, scaled by flow accumulation.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::hydro::FlowDirGrid;
use crate::raster::{ChannelRole, LandCover, PatchStack, RasterGrid};
use crate::{Error, Result};

/// Land-cover grouping used by the HRU table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LandClass {
    Urban,
    Cropland,
    Forest,
    Water,
}

impl LandClass {
    pub fn of(lc: LandCover) -> Self {
        match lc {
            LandCover::Water => LandClass::Water,
            LandCover::DevelopedLow | LandCover::DevelopedMedium | LandCover::DevelopedHigh => LandClass::Urban,
            LandCover::Cropland => LandClass::Cropland,
            LandCover::Barren | LandCover::DeciduousForest | LandCover::EvergreenForest => LandClass::Forest,
        }
    }
}

impl fmt::Display for LandClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LandClass::Urban => "urban",
            LandClass::Cropland => "cropland",
            LandClass::Forest => "forest",
            LandClass::Water => "water",
        };
        f.write_str(s)
    }
}

/// Slope band: 0 below 2 %, 1 from 2 % to below 8 %, 2 from 8 %.
pub fn slope_band(percent: f64) -> u8 {
    if percent < 2.0 {
        0
    } else if percent < 8.0 {
        1
    } else {
        2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HruRow {
    pub landcover: LandClass,
    pub soil: u32,
    pub slope_band: u8,
    pub infiltration: f64,
    pub runoff: f64,
}

/// Infiltration and runoff fractions keyed by (land class, soil, slope band).
#[derive(Debug, Clone, PartialEq)]
pub struct HruTable {
    rows: BTreeMap<(LandClass, u32, u8), (f64, f64)>,
}

impl Default for HruTable {
    /// Four land classes × three slope bands on soil class 1.
    fn default() -> Self {
        let spec = [
            (LandClass::Urban, [(0.05, 0.60), (0.03, 0.70), (0.02, 0.80)]),
            (LandClass::Cropland, [(0.15, 0.40), (0.10, 0.50), (0.08, 0.60)]),
            (LandClass::Forest, [(0.25, 0.20), (0.20, 0.30), (0.15, 0.40)]),
            (LandClass::Water, [(0.01, 0.90), (0.01, 0.90), (0.01, 0.90)]),
        ];
        let rows = spec
            .iter()
            .flat_map(|(lc, bands)| {
                bands.iter().enumerate().map(move |(b, (inf, run))| HruRow {
                    landcover: *lc,
                    soil: 1,
                    slope_band: b as u8,
                    infiltration: *inf,
                    runoff: *run,
                })
            })
            .collect::<Vec<_>>();
        Self::from_rows(rows).expect("default HRU table is valid")
    }
}

impl HruTable {
    pub fn from_rows(rows: impl IntoIterator<Item = HruRow>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for r in rows {
            let ok = (0.0..=1.0).contains(&r.infiltration) && (0.0..=1.0).contains(&r.runoff) && r.infiltration + r.runoff <= 1.0;
            if !ok {
                return Err(Error::Invalid(format!(
                    "HRU row {}/{}/{} needs fractions in [0, 1] summing to at most 1",
                    r.landcover, r.soil, r.slope_band
                )));
            }
            if map.insert((r.landcover, r.soil, r.slope_band), (r.infiltration, r.runoff)).is_some() {
                return Err(Error::Invalid(format!("duplicate HRU row {}/{}/{}", r.landcover, r.soil, r.slope_band)));
            }
        }
        Ok(Self { rows: map })
    }

    pub fn rows(&self) -> Vec<HruRow> {
        self.rows
            .iter()
            .map(|((lc, soil, band), (inf, run))| HruRow { landcover: *lc, soil: *soil, slope_band: *band, infiltration: *inf, runoff: *run })
            .collect()
    }

    /// `(infiltration, runoff)` for a cell.
    pub fn lookup(&self, lc: LandClass, soil: u32, band: u8) -> Result<(f64, f64)> {
        self.rows
            .get(&(lc, soil, band))
            .copied()
            .ok_or_else(|| Error::HruMissing(format!("landcover={lc} soil={soil} slope_band={band}")))
    }

    /// CSV with columns `landcover,soil,slope_band,infiltration,runoff`.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let rows = rdr.deserialize().collect::<std::result::Result<Vec<HruRow>, _>>()?;
        Self::from_rows(rows)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in self.rows() {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Initial concentrations per land class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandDefaults {
    pub urban: f64,
    pub cropland: f64,
    pub forest: f64,
    pub water: f64,
}

impl Default for LandDefaults {
    fn default() -> Self {
        Self { urban: 10.0, cropland: 5.0, forest: 1.0, water: 0.0 }
    }
}

impl LandDefaults {
    pub fn get(&self, lc: LandClass) -> f64 {
        match lc {
            LandClass::Urban => self.urban,
            LandClass::Cropland => self.cropland,
            LandClass::Forest => self.forest,
            LandClass::Water => self.water,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransportParams {
    pub max_steps: usize,
    /// Stop once no cell changes by more than this.
    pub tolerance: Option<f64>,
    pub discharger_value: f64,
    pub defaults: LandDefaults,
}

impl Default for TransportParams {
    fn default() -> Self {
        Self { max_steps: 200, tolerance: Some(1e-6), discharger_value: 100.0, defaults: LandDefaults::default() }
    }
}

/// Global mass bookkeeping after a step (step 0 is the initial state).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassLedger {
    pub step: usize,
    pub mass: f64,
    pub infiltrated: f64,
    pub exited: f64,
}

impl MassLedger {
    pub fn total(&self) -> f64 {
        self.mass + self.infiltrated + self.exited
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportResult {
    pub concentration: RasterGrid,
    /// Cumulative infiltrated mass per cell.
    pub deposited: RasterGrid,
    pub ledger: Vec<MassLedger>,
    pub steps_run: usize,
}

/// `min(1, ln(1+acc) / ln(1+acc_max))`, zero when `acc_max` is zero.
pub fn accumulation_scaling(acc: f64, acc_max: f64) -> f64 {
    if acc_max <= 0.0 {
        return 0.0;
    }
    ((1.0 + acc.max(0.0)).ln() / (1.0 + acc_max).ln()).min(1.0)
}

/// Runs the transfer iteration on a patch.
///
/// Discharger cells start at `discharger_value`, others at their land-class
/// default. Each step a cell infiltrates `m·infiltration`, sends
/// `m·runoff·s(acc)` to its D8 target and keeps the rest. Sinks keep what they
/// would send; pointers leaving the grid remove the mass from the patch.
pub fn transport_simulate(
    patch: &PatchStack,
    hru: &HruTable,
    dirs: &FlowDirGrid,
    accum: &RasterGrid,
    params: &TransportParams,
) -> Result<TransportResult> {
    let lc = patch.landcover()?;
    let soil = patch.require(ChannelRole::Soil)?;
    let slope = patch.require(ChannelRole::Slope)?;
    let dis = patch.by_role(ChannelRole::Discharger).map(|c| &c.grid);
    if !dirs.grid().same_geometry(lc) || !accum.same_geometry(lc) {
        return Err(Error::Invalid("flow grids do not match the patch geometry".into()));
    }
    let (w, n) = (lc.width, lc.len());
    let acc_max = accum.valid_values().fold(0.0, f64::max);

    let mut infil = vec![0.0; n];
    let mut send = vec![0.0; n];
    let mut mass = vec![0.0; n];
    let mut target = Vec::with_capacity(n);
    for i in 0..n {
        let class = LandCover::from_value(lc.values[i])
            .map(LandClass::of)
            .ok_or_else(|| Error::Invalid(format!("unknown land-cover value {} at cell {i}", lc.values[i])))?;
        let (inf, run) = hru.lookup(class, soil.values[i].round().max(0.0) as u32, slope_band(slope.values[i]))?;
        let a = accum.values[i];
        infil[i] = inf;
        send[i] = run * accumulation_scaling(if accum.is_nodata(a) { 0.0 } else { a }, acc_max);
        let is_dis = dis.is_some_and(|d| d.values[i] > 0.0 && !d.is_nodata(d.values[i]));
        mass[i] = if is_dis { params.discharger_value } else { params.defaults.get(class) };
        target.push(dirs.target(i / w, i % w));
    }

    let mut deposited = vec![0.0; n];
    let total_mass = |m: &[f64]| m.iter().sum::<f64>();
    let mut ledger = vec![MassLedger { step: 0, mass: total_mass(&mass), infiltrated: 0.0, exited: 0.0 }];
    let (mut infiltrated, mut exited) = (0.0, 0.0);
    let mut next = vec![0.0; n];
    let mut steps_run = 0;
    for step in 1..=params.max_steps {
        for i in 0..n {
            let m = mass[i];
            let lost = m * infil[i];
            let moved = m * send[i];
            deposited[i] += lost;
            infiltrated += lost;
            next[i] += m - lost - moved;
            match target[i] {
                Ok(Some((r, c))) => next[r * w + c] += moved,
                Ok(None) => next[i] += moved,
                Err(()) => exited += moved,
            }
        }
        let change = mass.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut mass, &mut next);
        next.fill(0.0);
        ledger.push(MassLedger { step, mass: total_mass(&mass), infiltrated, exited });
        steps_run = step;
        if params.tolerance.is_some_and(|tol| change < tol) {
            break;
        }
    }
    let mut concentration = lc.like(0.0);
    concentration.values = mass;
    let mut dep = lc.like(0.0);
    dep.values = deposited;
    Ok(TransportResult { concentration, deposited: dep, ledger, steps_run })
}

/// Binary maps from one median pooled over every valid value of every raster;
/// a cell is 1 when its value is at least the median. Nodata stays nodata.
pub fn threshold_by_median(rasters: &[RasterGrid]) -> Result<Vec<RasterGrid>> {
    let mut pooled: Vec<f64> = rasters.iter().flat_map(|r| r.valid_values()).collect();
    if pooled.is_empty() {
        return Err(Error::Invalid("no valid concentration values to threshold".into()));
    }
    pooled.sort_by(f64::total_cmp);
    let k = pooled.len();
    let median = if k % 2 == 1 { pooled[k / 2] } else { 0.5 * (pooled[k / 2 - 1] + pooled[k / 2]) };
    Ok(rasters
        .iter()
        .map(|r| {
            let mut out = r.clone();
            for v in &mut out.values {
                if !r.is_nodata(*v) {
                    *v = if *v >= median { 1.0 } else { 0.0 };
                }
            }
            out
        })
        .collect())
}
