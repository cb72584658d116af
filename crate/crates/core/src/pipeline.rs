//! End-to-end glue: world → samples → labeled patches → model → predictions →
//! metrics, plus the baseline and ablation runners built on the same pieces.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{
    empirical_semivariogram, fit_spherical, kriging_class, rule_based_predict, threshold_by_median, transport_simulate,
    HruTable, OrdinaryKriging, RuleParams, TransportParams,
};
use crate::eval::{ece, sample_point_metrics, MetricReport};
use crate::hydro::FlowDirGrid;
use crate::labeling::{expand_ground_truth, noise_mask, LabelMode, NoiseParams, NoiseWeights, SamplePoint};
use crate::model::{
    classify, finetune, pretrain_mae, FeatureSpec, LossMode, ModelState, NetConfig, TrainConfig,
    TrainLog, TrainSample,
};
use crate::raster::{extract_patch, read_patch, write_patch, Channel, ChannelRole, PatchStack, RasterGrid};
use crate::synth::{disjoint_split, SampleSpec, World, WorldSpec};
use crate::{Error, Result};

/// Every knob of a run in one flat table, so it maps onto a key-value config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub world_seed: u64,
    pub extent: usize,
    pub cell_size: f64,
    pub n_dischargers: usize,
    pub urban_fraction: f64,
    pub water_fraction: f64,
    pub transport_steps: usize,
    pub industries: Vec<String>,

    pub n_samples: usize,
    pub positive_fraction: f64,
    pub label_flip_rate: f64,
    pub label_mode: LabelMode,
    pub train_fraction: f64,

    pub patch_size: usize,
    pub w_dischargers: f64,
    pub w_landcover: f64,
    pub w_sample_dist: f64,
    pub w_downstream: f64,
    pub lambda_dischargers: f64,
    pub lambda_sample: f64,
    pub landcover_radius: usize,

    pub loss: LossMode,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub warmup_steps: Option<usize>,
    pub total_steps: Option<usize>,
    pub poly_power: f64,
    pub gamma: f64,
    pub pretrain_steps: usize,
    pub mask_ratio: f64,

    pub rule_threshold: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let world = WorldSpec::default();
        let weights = NoiseWeights::default();
        let noise = NoiseParams::default();
        let train = TrainConfig::default();
        Self {
            seed: 0,
            world_seed: world.seed,
            extent: world.extent,
            cell_size: world.cell_size,
            n_dischargers: world.n_dischargers,
            urban_fraction: world.urban_fraction,
            water_fraction: world.water_fraction,
            transport_steps: world.transport_steps,
            industries: world.industries,
            n_samples: 250,
            positive_fraction: world.positive_fraction,
            label_flip_rate: world.label_flip_rate,
            label_mode: LabelMode::Binary,
            train_fraction: 0.8,
            patch_size: 32,
            w_dischargers: weights.dischargers,
            w_landcover: weights.landcover,
            w_sample_dist: weights.sample_dist,
            w_downstream: weights.downstream,
            lambda_dischargers: noise.lambda_dischargers,
            lambda_sample: noise.lambda_sample,
            landcover_radius: noise.landcover_radius,
            loss: LossMode::Focus,
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            epochs: train.epochs,
            weight_decay: train.weight_decay,
            warmup_steps: train.warmup_steps,
            total_steps: train.total_steps,
            poly_power: train.poly_power,
            gamma: train.gamma,
            pretrain_steps: 0,
            mask_ratio: 0.5,
            rule_threshold: 0.5,
        }
    }
}

impl PipelineConfig {
    pub fn world_spec(&self) -> WorldSpec {
        WorldSpec {
            seed: self.world_seed,
            extent: self.extent,
            cell_size: self.cell_size,
            n_dischargers: self.n_dischargers,
            urban_fraction: self.urban_fraction,
            water_fraction: self.water_fraction,
            positive_fraction: self.positive_fraction,
            label_flip_rate: self.label_flip_rate,
            industries: self.industries.clone(),
            transport_steps: self.transport_steps,
        }
    }

    /// Samples keep clear of the world edge by half a patch.
    pub fn sample_spec(&self) -> SampleSpec {
        SampleSpec {
            n: self.n_samples,
            imbalance: (self.positive_fraction, 1.0 - self.positive_fraction),
            seed: self.seed,
            margin: self.patch_size / 2,
            flip_rate: self.label_flip_rate,
            mode: self.label_mode,
        }
    }

    pub fn noise_weights(&self) -> NoiseWeights {
        NoiseWeights {
            dischargers: self.w_dischargers,
            landcover: self.w_landcover,
            sample_dist: self.w_sample_dist,
            downstream: self.w_downstream,
        }
    }

    pub fn noise_params(&self) -> NoiseParams {
        NoiseParams {
            lambda_dischargers: self.lambda_dischargers,
            lambda_sample: self.lambda_sample,
            landcover_radius: self.landcover_radius,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            weight_decay: self.weight_decay,
            warmup_steps: self.warmup_steps,
            total_steps: self.total_steps,
            poly_power: self.poly_power,
            gamma: self.gamma,
            epochs: self.epochs,
            seed,
            ..TrainConfig::default()
        }
    }

    pub fn rule_params(&self) -> RuleParams {
        RuleParams { weights: self.noise_weights(), noise: self.noise_params(), threshold: self.rule_threshold }
    }

    pub fn validate(&self) -> Result<()> {
        self.world_spec().validate()?;
        self.noise_weights().validate()?;
        self.train_config(self.seed).schedule(1)?;
        if self.patch_size == 0 || self.patch_size % crate::model::SIZE_MULTIPLE != 0 {
            return Err(Error::Config(format!(
                "patch size {} must be a positive multiple of {}",
                self.patch_size,
                crate::model::SIZE_MULTIPLE
            )));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::Config(format!("train fraction {} outside [0, 1]", self.train_fraction)));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(Error::Config(format!("mask ratio {} outside [0, 1)", self.mask_ratio)));
        }
        Ok(())
    }
}

/// A patch centered on one sample with its expanded labels and noise mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPatch {
    pub sample_id: String,
    pub patch: PatchStack,
    pub labels: RasterGrid,
    pub noise: RasterGrid,
}

const LABEL_CHANNEL: &str = "label";
const NOISE_CHANNEL: &str = "noise";

impl LabeledPatch {
    /// The input channels with labels and noise appended, for storage.
    pub fn to_stack(&self) -> Result<PatchStack> {
        let mut s = self.patch.clone();
        s.upsert(Channel::new(LABEL_CHANNEL, ChannelRole::Label, self.labels.clone()));
        s.upsert(Channel::new(NOISE_CHANNEL, ChannelRole::Noise, self.noise.clone()));
        s.validate()?;
        Ok(s)
    }

    pub fn from_stack(sample_id: impl Into<String>, mut s: PatchStack) -> Result<Self> {
        let mut take = |role: ChannelRole| -> Result<RasterGrid> {
            let i = s
                .channels
                .iter()
                .position(|c| c.role == role)
                .ok_or_else(|| Error::Invalid(format!("stored patch has no {role:?} channel")))?;
            Ok(s.channels.remove(i).grid)
        };
        let labels = take(ChannelRole::Label)?;
        let noise = take(ChannelRole::Noise)?;
        Ok(Self { sample_id: sample_id.into(), patch: s, labels, noise })
    }
}

/// Cuts a patch around each sample in `centers`, expanding labels from the
/// `context` samples that fall inside it and weighting them with the noise mask.
pub fn make_patches(
    world: &World,
    centers: &[&SamplePoint],
    context: &[SamplePoint],
    config: &PipelineConfig,
) -> Result<Vec<LabeledPatch>> {
    let inputs = world.input_channels();
    let weights = config.noise_weights();
    let params = config.noise_params();
    centers
        .iter()
        .map(|s| {
            let patch = extract_patch(&inputs, s.location, config.patch_size)?;
            let labels = expand_ground_truth(&patch, context, config.label_mode)?;
            let mut noise = noise_mask(&patch, &labels, context, &weights, &params, config.label_mode)?;
            // stored patches hold f32, so keep memory and disk identical
            noise.quantize_f32();
            Ok(LabeledPatch { sample_id: s.id.clone(), patch, labels, noise })
        })
        .collect()
}

pub fn save_patches(patches: &[LabeledPatch], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for p in patches {
        write_patch(&p.to_stack()?, dir.join(format!("{}.fps", p.sample_id)))?;
    }
    Ok(())
}

/// Loads `<id>.fps` for each id, in the given order.
pub fn load_patches(ids: &[String], dir: impl AsRef<Path>) -> Result<Vec<LabeledPatch>> {
    let dir = dir.as_ref();
    ids.iter().map(|id| LabeledPatch::from_stack(id.clone(), read_patch(dir.join(format!("{id}.fps")))?)).collect()
}

/// Samples in `ids` order, failing on unknown ids.
pub fn select<'a>(samples: &'a [SamplePoint], ids: &[String]) -> Result<Vec<&'a SamplePoint>> {
    ids.iter()
        .map(|id| {
            samples
                .iter()
                .find(|s| &s.id == id)
                .ok_or_else(|| Error::Invalid(format!("split names unknown sample `{id}`")))
        })
        .collect()
}

/// Train and test patches for one world and sample set.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub train: Vec<LabeledPatch>,
    pub test: Vec<LabeledPatch>,
}

/// Disjoint split, then patches. Each side's labels come only from its own samples.
pub fn build_dataset(world: &World, samples: &[SamplePoint], config: &PipelineConfig) -> Result<Dataset> {
    let cs = world.channels[0].grid.cell_size;
    let (train_ids, test_ids) =
        disjoint_split(samples, config.patch_size, cs, (config.train_fraction, 1.0 - config.train_fraction))?;
    let train_s: Vec<SamplePoint> = select(samples, &train_ids)?.into_iter().cloned().collect();
    let test_s: Vec<SamplePoint> = select(samples, &test_ids)?.into_iter().cloned().collect();
    let train = make_patches(world, &train_s.iter().collect::<Vec<_>>(), &train_s, config)?;
    let test = make_patches(world, &test_s.iter().collect::<Vec<_>>(), &test_s, config)?;
    Ok(Dataset { train_ids, test_ids, train, test })
}

/// A fresh network whose input statistics are fitted to `patches`.
pub fn init_model(patches: &[LabeledPatch], config: &PipelineConfig, seed: u64) -> Result<ModelState> {
    let first = patches.first().ok_or_else(|| Error::Invalid("no patches to fit a model on".into()))?;
    let features = FeatureSpec::from_patch(&first.patch);
    let c = features.num_channels();
    let inputs = patches.iter().map(|p| features.encode(&p.patch)).collect::<Result<Vec<_>>>()?;
    let stats = features.fit_stats(&inputs)?;
    ModelState::init(NetConfig::new(c, config.label_mode.num_classes()), features, stats, seed)
}

pub fn train_samples(state: &ModelState, patches: &[LabeledPatch], mode: LabelMode) -> Result<Vec<TrainSample>> {
    patches.iter().map(|p| TrainSample::from_patch(state, &p.patch, &p.labels, &p.noise, mode)).collect()
}

/// Optional masked-autoencoder warm start over the patch inputs.
pub fn pretrain(state: ModelState, patches: &[LabeledPatch], config: &PipelineConfig, seed: u64) -> Result<(ModelState, Vec<f64>)> {
    if config.pretrain_steps == 0 {
        return Ok((state, Vec::new()));
    }
    let inputs = patches.iter().map(|p| state.featurize(&p.patch)).collect::<Result<Vec<_>>>()?;
    let tc = TrainConfig { total_steps: Some(config.pretrain_steps), warmup_steps: None, ..config.train_config(seed) };
    pretrain_mae(state, &inputs, config.patch_size, config.mask_ratio, &tc)
}

/// Initializes, optionally pretrains, and fine-tunes with `loss`.
pub fn train_model(
    patches: &[LabeledPatch],
    config: &PipelineConfig,
    loss: LossMode,
    seed: u64,
) -> Result<(ModelState, TrainLog)> {
    let state = init_model(patches, config, seed)?;
    let (state, _) = pretrain(state, patches, config, seed)?;
    let data = train_samples(&state, patches, config.label_mode)?;
    finetune(state, &data, None, &config.train_config(seed), loss)
}

/// Per-patch prediction maps; non-water cells are nodata.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPrediction {
    pub sample_id: String,
    /// Probability of any contamination, `1 − p(class 0)`.
    pub probability: RasterGrid,
    pub classes: RasterGrid,
    /// Probability of the predicted class.
    pub confidence: RasterGrid,
}

pub fn predict_patch(state: &ModelState, patch: &PatchStack, sample_id: &str) -> Result<PatchPrediction> {
    let probs = state.forward(patch)?;
    let water = patch.water_mask()?;
    let t = patch.template()?;
    let plane = patch.size_p * patch.size_p;
    let k = state.config.num_classes;
    let cls = classify(&probs, k, plane);
    let mut probability = t.like(t.nodata);
    let mut classes = t.like(t.nodata);
    let mut confidence = t.like(t.nodata);
    for i in (0..plane).filter(|i| water[*i]) {
        probability.values[i] = 1.0 - probs[i];
        classes.values[i] = f64::from(cls[i]);
        confidence.values[i] = probs[cls[i] as usize * plane + i];
    }
    Ok(PatchPrediction { sample_id: sample_id.into(), probability, classes, confidence })
}

pub fn predict_patches(state: &ModelState, patches: &[LabeledPatch]) -> Result<Vec<PatchPrediction>> {
    patches.iter().map(|p| predict_patch(state, &p.patch, &p.sample_id)).collect()
}

/// Scores each prediction at the pixel of the sample it was centered on.
pub fn evaluate_predictions(preds: &[PatchPrediction], samples: &[SamplePoint], k: usize) -> Result<MetricReport> {
    let ids: Vec<String> = preds.iter().map(|p| p.sample_id.clone()).collect();
    let chosen = select(samples, &ids)?;
    let pairs: Vec<(&RasterGrid, &SamplePoint)> = preds.iter().map(|p| &p.classes).zip(chosen).collect();
    sample_point_metrics(&pairs, k)
}

/// Expected calibration error of the sample-point predictions.
pub fn sample_point_ece(preds: &[PatchPrediction], samples: &[SamplePoint], n_bins: usize) -> Result<f64> {
    let ids: Vec<String> = preds.iter().map(|p| p.sample_id.clone()).collect();
    let chosen = select(samples, &ids)?;
    let mut conf = Vec::new();
    let mut ok = Vec::new();
    for (p, s) in preds.iter().zip(chosen) {
        let (r, c) = p.classes.cell_of(s.location.0, s.location.1).ok_or_else(|| Error::Invalid(format!("sample `{}` outside its patch", s.id)))?;
        conf.push(p.confidence.get(r, c));
        ok.push(p.classes.get(r, c) == f64::from(s.label));
    }
    ece(&conf, &ok, n_bins)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub seed: u64,
    pub loss: LossMode,
    pub report: MetricReport,
}

/// Trains both loss variants for every seed on the same dataset and scores
/// them at the test samples.
pub fn loss_ablation(dataset: &Dataset, samples: &[SamplePoint], config: &PipelineConfig, seeds: &[u64]) -> Result<Vec<AblationRow>> {
    let k = config.label_mode.num_classes();
    let mut rows = Vec::new();
    for &seed in seeds {
        for loss in [LossMode::Focus, LossMode::FocalOnly] {
            let (state, _) = train_model(&dataset.train, config, loss, seed)?;
            let preds = predict_patches(&state, &dataset.test)?;
            rows.push(AblationRow { seed, loss, report: evaluate_predictions(&preds, samples, k)? });
        }
    }
    Ok(rows)
}

/// Mean macro F-score per loss variant: (FOCUS, focal-only).
pub fn ablation_means(rows: &[AblationRow]) -> (f64, f64) {
    let mean = |mode: LossMode| {
        let v: Vec<f64> = rows.iter().filter(|r| r.loss == mode).map(|r| r.report.macro_avg.fscore).collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    };
    (mean(LossMode::Focus), mean(LossMode::FocalOnly))
}

/// Rule-based maps for the test patches, with the training samples as known evidence.
pub fn rule_baseline(test: &[LabeledPatch], known: &[SamplePoint], config: &PipelineConfig) -> Result<Vec<PatchPrediction>> {
    let params = config.rule_params();
    test.iter()
        .map(|p| {
            let dirs = FlowDirGrid::from_raster(p.patch.require(ChannelRole::Flowdir)?.clone())?;
            let classes = rule_based_predict(&p.patch, &dirs, known, &params)?;
            let confidence = classes.like(classes.nodata);
            Ok(PatchPrediction { sample_id: p.sample_id.clone(), probability: classes.clone(), classes, confidence })
        })
        .collect()
}

/// Ordinary Kriging of the training labels with a fitted spherical variogram,
/// evaluated at each test sample and thresholded at 0.5.
pub fn kriging_baseline(train: &[&SamplePoint], test: &[&SamplePoint], k: usize) -> Result<MetricReport> {
    let pts: Vec<(f64, f64)> = train.iter().map(|s| s.location).collect();
    let vals: Vec<f64> = train.iter().map(|s| f64::from(s.label.min(1))).collect();
    let max_d = pts
        .iter()
        .flat_map(|a| pts.iter().map(move |b| (a.0 - b.0).hypot(a.1 - b.1)))
        .fold(0.0, f64::max);
    let n_bins = 15;
    let edges: Vec<f64> = (0..=n_bins).map(|i| max_d / 2.0 * i as f64 / n_bins as f64).collect();
    let emp = empirical_semivariogram(&pts, &vals, &edges)?;
    let model = fit_spherical(&emp)?;
    let krig = OrdinaryKriging::new(&pts, &vals, model)?;
    let truth: Vec<u8> = test.iter().map(|s| s.label.min(1)).collect();
    let pred = test.iter().map(|s| Ok(kriging_class(krig.predict(s.location)?.estimate))).collect::<Result<Vec<u8>>>()?;
    Ok(MetricReport::from_pairs(&truth, &pred, k.min(2)))
}

/// Transport simulation over the whole world, thresholded at the median of
/// the water-cell concentrations.
pub fn simulate_baseline(world: &World, hru: &HruTable, params: &TransportParams) -> Result<RasterGrid> {
    let inputs = world.input_channels();
    let n = world.extent();
    let stack = PatchStack::new(n, (0.0, 0.0), inputs)?;
    let dirs = FlowDirGrid::from_raster(stack.require(ChannelRole::Flowdir)?.clone())?;
    let accum = stack.require(ChannelRole::Accumulation)?.clone();
    let mut conc = transport_simulate(&stack, hru, &dirs, &accum, params)?.concentration;
    let water = stack.water_mask()?;
    for (v, w) in conc.values.iter_mut().zip(&water) {
        if !w {
            *v = conc.nodata;
        }
    }
    Ok(threshold_by_median(&[conc])?.remove(0))
}

/// Scores a world-sized class map at the given samples.
pub fn evaluate_world_map(map: &RasterGrid, samples: &[&SamplePoint], k: usize) -> Result<MetricReport> {
    let pairs: Vec<(&RasterGrid, &SamplePoint)> = samples.iter().map(|s| (map, *s)).collect();
    sample_point_metrics(&pairs, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_world, sample_points};

    fn small() -> PipelineConfig {
        PipelineConfig { extent: 512, n_dischargers: 20, n_samples: 40, epochs: 2, ..Default::default() }
    }

    #[test]
    fn config_round_trips_and_validates() {
        let c = PipelineConfig::default();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<PipelineConfig>(&s).unwrap(), c);
        c.validate().unwrap();
        assert!(PipelineConfig { patch_size: 30, ..Default::default() }.validate().is_err());
        assert!(PipelineConfig { w_dischargers: 0.5, ..Default::default() }.validate().is_err());
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn dataset_train_predict_evaluate() {
        let cfg = small();
        let world = generate_world(&cfg.world_spec()).unwrap();
        let samples = sample_points(&world, &cfg.sample_spec()).unwrap();
        let ds = build_dataset(&world, &samples, &cfg).unwrap();
        assert_eq!(ds.train.len() + ds.test.len(), 40);
        for p in ds.train.iter().chain(&ds.test) {
            assert_eq!(p.patch.size_p, 32);
            assert!(p.patch.channel("truth").is_none());
        }
        let (state, log) = train_model(&ds.train, &cfg, LossMode::Focus, 1).unwrap();
        assert!(!log.step_losses.is_empty());
        let preds = predict_patches(&state, &ds.test).unwrap();
        let report = evaluate_predictions(&preds, &samples, 2).unwrap();
        assert_eq!(report.support.iter().sum::<u64>(), ds.test.len() as u64);
        let e = sample_point_ece(&preds, &samples, 10).unwrap();
        assert!((0.0..=1.0).contains(&e));

        let rule = rule_baseline(&ds.test, &select(&samples, &ds.train_ids).unwrap().into_iter().cloned().collect::<Vec<_>>(), &cfg).unwrap();
        evaluate_predictions(&rule, &samples, 2).unwrap();
        let tr = select(&samples, &ds.train_ids).unwrap();
        let te = select(&samples, &ds.test_ids).unwrap();
        kriging_baseline(&tr, &te, 2).unwrap();
        let sim = simulate_baseline(&world, &HruTable::default(), &TransportParams::default()).unwrap();
        evaluate_world_map(&sim, &te, 2).unwrap();
    }

    #[test]
    fn stored_patches_round_trip() {
        let cfg = small();
        let world = generate_world(&cfg.world_spec()).unwrap();
        let samples = sample_points(&world, &cfg.sample_spec()).unwrap();
        let centers: Vec<&SamplePoint> = samples.iter().take(3).collect();
        let patches = make_patches(&world, &centers, &samples, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_patches(&patches, dir.path()).unwrap();
        let ids: Vec<String> = centers.iter().map(|s| s.id.clone()).collect();
        let back = load_patches(&ids, dir.path()).unwrap();
        assert_eq!(patches, back);
    }
}
