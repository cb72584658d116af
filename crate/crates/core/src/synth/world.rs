//! Synthetic landscapes: terrain, drainage, land cover, dischargers and a
//! planted contamination field.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::noise::{fbm_field, splitmix64};
use crate::baselines::{transport_simulate, HruTable, TransportParams};
use crate::hydro::{d8_flow_direction, flow_accumulation, slope_percent, D8};
use crate::raster::{distance_transform, rasterize_points, read_patch, write_patch, Channel, ChannelRole, LandCover, PatchStack, RasterGrid};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldSpec {
    pub seed: u64,
    /// Cells per side.
    pub extent: usize,
    /// Meters.
    pub cell_size: f64,
    pub n_dischargers: usize,
    pub urban_fraction: f64,
    pub water_fraction: f64,
    /// Share of sampled points labeled above threshold.
    pub positive_fraction: f64,
    /// Probability of flipping each sampled label.
    pub label_flip_rate: f64,
    pub industries: Vec<String>,
    /// Transfer iterations used to plant the contamination field.
    pub transport_steps: usize,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            seed: 42,
            extent: 1024,
            cell_size: 30.0,
            n_dischargers: 60,
            urban_fraction: 0.15,
            water_fraction: 0.1,
            positive_fraction: 0.895,
            label_flip_rate: 0.0,
            industries: vec!["airport".into(), "landfill".into(), "manufacturing".into()],
            transport_steps: 60,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        let frac = |v: f64| (0.0..=1.0).contains(&v);
        if self.extent < 512 {
            return Err(Error::Config(format!("world extent must be at least 512 cells, got {}", self.extent)));
        }
        if !(self.cell_size > 0.0) {
            return Err(Error::Config("cell size must be positive".into()));
        }
        if !frac(self.urban_fraction) || !frac(self.water_fraction) || !frac(self.positive_fraction) || !frac(self.label_flip_rate) {
            return Err(Error::Config("fractions must lie in [0, 1]".into()));
        }
        if self.urban_fraction + self.water_fraction > 1.0 {
            return Err(Error::Config(format!(
                "urban fraction {} and water fraction {} cannot both fit",
                self.urban_fraction, self.water_fraction
            )));
        }
        if self.n_dischargers > 0 && self.industries.is_empty() {
            return Err(Error::Config("dischargers need at least one industry".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Facility {
    pub industry: String,
    pub easting: f64,
    pub northing: f64,
}

/// World channels plus the discharger facilities they were built from.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub channels: Vec<Channel>,
    pub facilities: Vec<Facility>,
}

pub const WORLD_FILE: &str = "world.fps";
pub const FACILITIES_FILE: &str = "facilities.csv";

impl World {
    pub fn channel(&self, name: &str) -> Result<&RasterGrid> {
        self.channels
            .iter()
            .find(|c| c.name == name)
            .map(|c| &c.grid)
            .ok_or_else(|| Error::Invalid(format!("world has no `{name}` channel")))
    }

    pub fn landcover(&self) -> Result<&RasterGrid> {
        self.channel("landcover")
    }

    pub fn truth(&self) -> Result<&RasterGrid> {
        self.channel("truth")
    }

    pub fn extent(&self) -> usize {
        self.channels.first().map_or(0, |c| c.grid.width)
    }

    /// Channels that patches are cut from (everything but the planted truth).
    pub fn input_channels(&self) -> Vec<Channel> {
        self.channels.iter().filter(|c| c.role != ChannelRole::Truth).cloned().collect()
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let g = &self.channels[0].grid;
        let center = (g.origin.0 + 0.5 * g.width as f64 * g.cell_size, g.origin.1 - 0.5 * g.height as f64 * g.cell_size);
        write_patch(&PatchStack::new(g.width, center, self.channels.clone())?, dir.join(WORLD_FILE))?;
        let mut w = csv::Writer::from_path(dir.join(FACILITIES_FILE))?;
        for f in &self.facilities {
            w.serialize(f)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let stack = read_patch(dir.join(WORLD_FILE))?;
        let mut rdr = csv::Reader::from_path(dir.join(FACILITIES_FILE))?;
        let facilities = rdr.deserialize().collect::<std::result::Result<Vec<Facility>, _>>()?;
        Ok(Self { channels: stack.channels, facilities })
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Lowest(f64, usize);

impl Eq for Lowest {}

impl Ord for Lowest {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Lowest {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Priority-flood depression filling: every interior cell ends up with a
/// strictly lower neighbour on its way to the grid edge.
fn fill_depressions(dem: &mut RasterGrid, epsilon: f64) {
    let (w, h) = (dem.width, dem.height);
    let mut done = vec![false; w * h];
    let mut heap = BinaryHeap::new();
    for r in 0..h {
        for c in 0..w {
            if r == 0 || c == 0 || r == h - 1 || c == w - 1 {
                let i = r * w + c;
                done[i] = true;
                heap.push(Lowest(dem.values[i], i));
            }
        }
    }
    while let Some(Lowest(z, i)) = heap.pop() {
        let (r, c) = (i / w, i % w);
        for (_, dr, dc) in D8 {
            let (nr, nc) = (r as isize + dr, c as isize + dc);
            if !dem.in_bounds(nr, nc) {
                continue;
            }
            let j = nr as usize * w + nc as usize;
            if done[j] {
                continue;
            }
            done[j] = true;
            if dem.values[j] <= z {
                dem.values[j] = z + epsilon;
            }
            heap.push(Lowest(dem.values[j], j));
        }
    }
}

/// Indices of the `k` largest values, ties broken by lower index.
fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|a, b| values[*b].total_cmp(&values[*a]).then(a.cmp(b)));
    idx.truncate(k);
    idx
}

fn quantize(g: &mut RasterGrid) {
    g.quantize_f32();
}

/// Builds a world deterministically from `spec`.
pub fn generate_world(spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let n = spec.extent;
    let cs = spec.cell_size;
    let template = RasterGrid::new(n, n, cs, (0.0, n as f64 * cs), 0.0)?;
    let seed = |k: u64| splitmix64(spec.seed ^ splitmix64(k));
    let mut rng = ChaCha8Rng::seed_from_u64(seed(0));

    // terrain: fractal noise on a gentle regional tilt
    let relief = fbm_field(seed(1), n, n as f64 / 4.0, 5);
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (tx, ty) = (angle.cos(), angle.sin());
    let mut dem = template.like(0.0);
    for r in 0..n {
        for c in 0..n {
            let tilt = 0.02 * (tx * c as f64 + ty * r as f64);
            dem.set(r, c, 100.0 + 60.0 * relief[r * n + c] + tilt);
        }
    }
    quantize(&mut dem);
    fill_depressions(&mut dem, 1e-3);
    quantize(&mut dem);

    // surface water along the highest-accumulation cells, carved one meter deep
    let acc0 = flow_accumulation(&d8_flow_direction(&dem)?)?;
    let n_water = (spec.water_fraction * (n * n) as f64).round() as usize;
    let water = top_k(&acc0.values, n_water);
    let mut is_water = vec![false; n * n];
    for i in &water {
        is_water[*i] = true;
        dem.values[*i] -= 1.0;
    }
    quantize(&mut dem);
    let dirs = d8_flow_direction(&dem)?;
    let accum = flow_accumulation(&dirs)?;

    // land cover from a second field: urban where it is highest, the rest split by a third
    let urban_field = fbm_field(seed(2), n, n as f64 / 8.0, 4);
    let mix_field = fbm_field(seed(3), n, n as f64 / 10.0, 4);
    let land: Vec<usize> = (0..n * n).filter(|i| !is_water[*i]).collect();
    let n_urban = ((spec.urban_fraction * (n * n) as f64).round() as usize).min(land.len());
    let mut by_urban = land.clone();
    by_urban.sort_by(|a, b| urban_field[*b].total_cmp(&urban_field[*a]).then(a.cmp(b)));
    let mut lc = template.like(LandCover::Water.code() as f64);
    for (rank, i) in by_urban[..n_urban].iter().enumerate() {
        let class = match rank * 3 / n_urban.max(1) {
            0 => LandCover::DevelopedHigh,
            1 => LandCover::DevelopedMedium,
            _ => LandCover::DevelopedLow,
        };
        lc.values[*i] = class.code() as f64;
    }
    let mut rest = by_urban[n_urban..].to_vec();
    rest.sort_by(|a, b| mix_field[*a].total_cmp(&mix_field[*b]).then(a.cmp(b)));
    let m = rest.len() as f64;
    for (rank, i) in rest.iter().enumerate() {
        let q = rank as f64 / m.max(1.0);
        let class = if q < 0.03 {
            LandCover::Barren
        } else if q < 0.43 {
            LandCover::Cropland
        } else if q < 0.75 {
            LandCover::DeciduousForest
        } else {
            LandCover::EvergreenForest
        };
        lc.values[*i] = class.code() as f64;
    }

    let slope = slope_percent(&dem);
    let soil = template.like(1.0);

    // dischargers: weighted sampling without replacement among developed cells,
    // weight = developed share of the surrounding 11×11 window
    let developed: Vec<bool> = lc.values.iter().map(|v| LandCover::from_value(*v).is_some_and(|c| c.is_developed())).collect();
    let density = box_mean(&developed, n, 5);
    let mut keyed: Vec<(f64, usize)> = (0..n * n)
        .filter(|i| developed[*i])
        .map(|i| {
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            (u.ln() / density[i], i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    keyed.truncate(spec.n_dischargers);
    let mut chosen: Vec<usize> = keyed.into_iter().map(|(_, i)| i).collect();
    chosen.sort_unstable();
    let mut industries = spec.industries.clone();
    industries.shuffle(&mut rng);
    let facilities: Vec<Facility> = chosen
        .iter()
        .enumerate()
        .map(|(k, i)| {
            let (e, no) = template.cell_center(i / n, i % n);
            Facility { industry: industries[k % industries.len()].clone(), easting: e, northing: no }
        })
        .collect();
    let (dis, _) = rasterize_points(&facilities.iter().map(|f| (f.easting, f.northing)).collect::<Vec<_>>(), &template);

    let mut channels = vec![
        Channel::new("dem", ChannelRole::Dem, dem),
        Channel::new("landcover", ChannelRole::Landcover, lc),
        Channel::new("soil", ChannelRole::Soil, soil),
        Channel::new("slope", ChannelRole::Slope, slope),
        Channel::new("flowdir", ChannelRole::Flowdir, dirs.grid().clone()),
        Channel::new("accumulation", ChannelRole::Accumulation, accum.clone()),
        Channel::new("dischargers", ChannelRole::Discharger, dis),
    ];
    let mut names: Vec<&String> = spec.industries.iter().collect();
    names.sort();
    names.dedup();
    for name in names {
        let pts: Vec<(f64, f64)> = facilities.iter().filter(|f| &f.industry == name).map(|f| (f.easting, f.northing)).collect();
        if pts.is_empty() {
            continue;
        }
        let (src, _) = rasterize_points(&pts, &template);
        channels.push(Channel::new(format!("dist_{name}"), ChannelRole::Distance, distance_transform(&src).grid));
    }

    let stack = PatchStack::new(n, (0.0, 0.0), channels.clone())?;
    let params = TransportParams { max_steps: spec.transport_steps, tolerance: None, ..Default::default() };
    let truth = transport_simulate(&stack, &HruTable::default(), &dirs, &accum, &params)?.concentration;
    channels.push(Channel::new("truth", ChannelRole::Truth, truth));
    for ch in &mut channels {
        quantize(&mut ch.grid);
    }
    Ok(World { channels, facilities })
}

/// Mean of a boolean mask over the `(2r+1)²` window, clipped at the border.
fn box_mean(mask: &[bool], n: usize, r: usize) -> Vec<f64> {
    // summed-area table
    let mut sat = vec![0u32; (n + 1) * (n + 1)];
    for y in 0..n {
        for x in 0..n {
            sat[(y + 1) * (n + 1) + x + 1] =
                u32::from(mask[y * n + x]) + sat[y * (n + 1) + x + 1] + sat[(y + 1) * (n + 1) + x] - sat[y * (n + 1) + x];
        }
    }
    let mut out = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(n));
            let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(n));
            let s = sat[y1 * (n + 1) + x1] + sat[y0 * (n + 1) + x0] - sat[y0 * (n + 1) + x1] - sat[y1 * (n + 1) + x0];
            out[y * n + x] = s as f64 / ((y1 - y0) * (x1 - x0)) as f64;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> WorldSpec {
        WorldSpec { seed, extent: 512, n_dischargers: 20, ..Default::default() }
    }

    #[test]
    fn deterministic_and_complete() {
        let a = generate_world(&small(3)).unwrap();
        let b = generate_world(&small(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.facilities.len(), 20);
        for name in ["dem", "landcover", "soil", "slope", "flowdir", "accumulation", "dischargers", "truth"] {
            assert_eq!(a.channel(name).unwrap().len(), 512 * 512);
        }
        assert!(a.channels.iter().any(|c| c.role == ChannelRole::Distance));
        let dis = a.channel("dischargers").unwrap();
        assert_eq!(dis.values.iter().filter(|v| **v == 1.0).count(), 20);
        let lc = a.landcover().unwrap();
        for f in &a.facilities {
            let (r, c) = lc.cell_of(f.easting, f.northing).unwrap();
            assert!(LandCover::from_value(lc.get(r, c)).unwrap().is_developed());
        }
    }

    #[test]
    fn no_urban_means_no_dischargers() {
        let w = generate_world(&WorldSpec { urban_fraction: 0.0, ..small(1) }).unwrap();
        assert!(w.facilities.is_empty());
        assert!(!w.channels.iter().any(|c| c.role == ChannelRole::Distance));
    }

    #[test]
    fn fractions_are_exact_and_validated() {
        let w = generate_world(&small(5)).unwrap();
        let lc = w.landcover().unwrap();
        let water = lc.values.iter().filter(|v| **v == 11.0).count() as f64 / lc.len() as f64;
        assert!((water - 0.1).abs() < 1e-5);
        assert!(generate_world(&WorldSpec { extent: 256, ..small(1) }).is_err());
        assert!(generate_world(&WorldSpec { urban_fraction: 0.95, ..small(1) }).is_err());
    }

    #[test]
    fn filled_terrain_drains_to_the_edge() {
        let mut dem = RasterGrid::new(6, 6, 30.0, (0.0, 180.0), 10.0).unwrap();
        dem.set(2, 2, 1.0);
        dem.set(3, 3, 2.0);
        fill_depressions(&mut dem, 1e-3);
        let dirs = d8_flow_direction(&dem).unwrap();
        for r in 1..5 {
            for c in 1..5 {
                assert_ne!(dirs.code(r, c), 0, "interior sink at ({r},{c})");
            }
        }
    }

    #[test]
    fn save_load_round_trip() {
        let w = generate_world(&small(9)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        w.save(dir.path()).unwrap();
        assert_eq!(World::load(dir.path()).unwrap(), w);
    }
}
