//! Driver behind the `contam` binary: generate a synthetic world, label it, train, predict, evaluate and
//! compare against the baselines.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use contam::baselines::{HruTable, TransportParams};
use contam::eval::{
    mean_by_overlap, noise_weight_grid_search, overlap_trials, predict_with_halo, timing_benchmark, wilcoxon_signed_rank,
    BenchMode, DEFAULT_BINS,
};
use contam::hydro::FlowDirGrid;
use contam::labeling::{read_samples_csv, write_samples_csv, SamplePoint};
use contam::model::{finetune, LossMode, ModelState};
use contam::pipeline::{self, LabeledPatch, PatchPrediction, PipelineConfig};
use contam::raster::{read_patch, write_patch, Channel, ChannelRole, PatchStack, RasterGrid};
use contam::synth::{generate_world, read_split_csv, sample_points, write_split_csv, World};
use contam::{Error, Result};

/// Render colors: class 0, class 1, class 2, non-water.
const PALETTE: [[u8; 3]; 4] = [[0, 114, 178], [213, 94, 0], [240, 228, 66], [220, 220, 220]];

#[derive(Parser)]
#[command(name = "contam", version, about = "Surface-water contamination mapping from sparse samples")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Overrides the `seed` config key.
    #[arg(long)]
    seed: Option<u64>,
    /// Flat TOML file of config keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Focus,
    Focal,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineKind {
    Rule,
    Krige,
    Simulate,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world.
    GenWorld {
        #[command(flatten)]
        common: Common,
    },
    /// Draw labeled water samples from a world.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        world: PathBuf,
    },
    /// Split samples, cut patches, expand labels and build noise masks.
    MakePatches {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        samples: PathBuf,
    },
    /// Masked-autoencoder pretraining on the training patches.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        patches: PathBuf,
    },
    /// Train the segmentation model.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        patches: PathBuf,
        #[arg(long, value_enum)]
        loss: Option<LossArg>,
        /// Start from a pretrained checkpoint.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Probability and class maps for a split's patches, with PNG renders.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        patches: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Sample-point metrics of stored predictions.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        samples: PathBuf,
    },
    /// Run a comparison method on the test samples.
    Baseline {
        #[arg(value_enum)]
        kind: BaselineKind,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        patches: PathBuf,
        /// HRU table CSV for `simulate`; built-in defaults otherwise.
        #[arg(long)]
        hru: Option<PathBuf>,
    },
    /// Train once per noise-weight configuration and rank them.
    AblateNoiseWeights {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        samples: PathBuf,
        /// Evaluate only the first N configurations.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// FOCUS against plain focal loss over several seeds, with a Wilcoxon test.
    AblateLoss {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        samples: PathBuf,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
    },
    /// Prediction agreement on overlapping patches.
    Consistency {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, default_value_t = 3)]
        locations: usize,
    },
    /// Time patch inference against per-point buffer aggregation.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 1000)]
        points: usize,
        #[arg(long, default_value_t = 10)]
        runs: usize,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenWorld { common }
            | Command::Sample { common, .. }
            | Command::MakePatches { common, .. }
            | Command::Pretrain { common, .. }
            | Command::Train { common, .. }
            | Command::Predict { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Baseline { common, .. }
            | Command::AblateNoiseWeights { common, .. }
            | Command::AblateLoss { common, .. }
            | Command::Consistency { common, .. }
            | Command::Bench { common, .. } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::GenWorld { .. } => "gen-world",
            Command::Sample { .. } => "sample",
            Command::MakePatches { .. } => "make-patches",
            Command::Pretrain { .. } => "pretrain",
            Command::Train { .. } => "train",
            Command::Predict { .. } => "predict",
            Command::Evaluate { .. } => "evaluate",
            Command::Baseline { .. } => "baseline",
            Command::AblateNoiseWeights { .. } => "ablate-noise-weights",
            Command::AblateLoss { .. } => "ablate-loss",
            Command::Consistency { .. } => "consistency",
            Command::Bench { .. } => "bench",
        }
    }
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    config_path: Option<PathBuf>,
    config: PipelineConfig,
    seed: u64,
    inputs: BTreeMap<String, PathBuf>,
    outputs: Vec<String>,
    timestamp: u64,
    version: &'static str,
}

/// Collects outputs as they are written, for the manifest.
struct Run {
    out: PathBuf,
    outputs: Vec<String>,
}

impl Run {
    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out.join(name)
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(name);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(p, contents)?;
        Ok(())
    }
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_samples(path: &Path, cfg: &PipelineConfig) -> Result<Vec<SamplePoint>> {
    read_samples_csv(fs::File::open(path)?, cfg.label_mode)
}

fn read_split(patches: &Path) -> Result<(Vec<String>, Vec<String>)> {
    read_split_csv(fs::File::open(patches.join("split.csv"))?)
}

fn split_dir(patches: &Path, split: SplitArg) -> (PathBuf, bool) {
    match split {
        SplitArg::Train => (patches.join("train"), true),
        SplitArg::Test => (patches.join("test"), false),
    }
}

fn load_split(patches: &Path, split: SplitArg) -> Result<Vec<LabeledPatch>> {
    let (train, test) = read_split(patches)?;
    let (dir, is_train) = split_dir(patches, split);
    pipeline::load_patches(if is_train { &train } else { &test }, dir)
}

fn render_png(classes: &RasterGrid, path: &Path) -> Result<()> {
    let mut img = image::RgbImage::new(classes.width as u32, classes.height as u32);
    for r in 0..classes.height {
        for c in 0..classes.width {
            let v = classes.get(r, c);
            let k = if classes.is_nodata(v) { 3 } else { (v as usize).min(2) };
            img.put_pixel(c as u32, r as u32, image::Rgb(PALETTE[k]));
        }
    }
    img.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::Io(io),
        other => Error::Format(other.to_string()),
    })
}

fn prediction_stack(p: &PatchPrediction, size_p: usize, center: (f64, f64)) -> Result<PatchStack> {
    PatchStack::new(
        size_p,
        center,
        vec![
            Channel::new("probability", ChannelRole::Probability, p.probability.clone()),
            Channel::new("prediction", ChannelRole::Prediction, p.classes.clone()),
            Channel::new("confidence", ChannelRole::Probability, p.confidence.clone()),
        ],
    )
}

fn prediction_from_stack(id: &str, s: &PatchStack) -> Result<PatchPrediction> {
    let get = |name: &str| {
        s.channel(name).map(|c| c.grid.clone()).ok_or_else(|| Error::Invalid(format!("prediction file lacks `{name}`")))
    };
    Ok(PatchPrediction { sample_id: id.into(), probability: get("probability")?, classes: get("prediction")?, confidence: get("confidence")? })
}

fn execute(cmd: &Command, cfg: &PipelineConfig, run: &mut Run, inputs: &mut BTreeMap<String, PathBuf>) -> Result<()> {
    let k = cfg.label_mode.num_classes();
    match cmd {
        Command::GenWorld { .. } => {
            let world = generate_world(&cfg.world_spec())?;
            world.save(&run.out)?;
            run.outputs.push(contam::synth::WORLD_FILE.into());
            run.outputs.push(contam::synth::FACILITIES_FILE.into());
            println!("world: {} cells per side, {} dischargers", world.extent(), world.facilities.len());
        }
        Command::Sample { world, .. } => {
            inputs.insert("world".into(), world.clone());
            let w = World::load(world)?;
            let samples = sample_points(&w, &cfg.sample_spec())?;
            let mut buf = Vec::new();
            write_samples_csv(&samples, &mut buf)?;
            run.write("samples.csv", buf)?;
            let pos = samples.iter().filter(|s| s.label >= 1).count();
            println!("samples: {} ({} above threshold)", samples.len(), pos);
        }
        Command::MakePatches { world, samples, .. } => {
            inputs.insert("world".into(), world.clone());
            inputs.insert("samples".into(), samples.clone());
            let w = World::load(world)?;
            let s = read_samples(samples, cfg)?;
            let ds = pipeline::build_dataset(&w, &s, cfg)?;
            let mut buf = Vec::new();
            write_split_csv(&ds.train_ids, &ds.test_ids, &mut buf)?;
            run.write("split.csv", buf)?;
            let train_dir = run.path("train");
            pipeline::save_patches(&ds.train, train_dir)?;
            let test_dir = run.path("test");
            pipeline::save_patches(&ds.test, test_dir)?;
            println!("patches: {} train, {} test", ds.train.len(), ds.test.len());
        }
        Command::Pretrain { patches, .. } => {
            inputs.insert("patches".into(), patches.clone());
            let train = load_split(patches, SplitArg::Train)?;
            let state = pipeline::init_model(&train, cfg, cfg.seed)?;
            let steps = if cfg.pretrain_steps == 0 { 200 } else { cfg.pretrain_steps };
            let cfg = PipelineConfig { pretrain_steps: steps, ..cfg.clone() };
            let (state, losses) = pipeline::pretrain(state, &train, &cfg, cfg.seed)?;
            state.save(run.path("pretrained.ckpt"))?;
            let mut csv = String::from("step,loss\n");
            for (i, l) in losses.iter().enumerate() {
                csv.push_str(&format!("{i},{l}\n"));
            }
            run.write("pretrain_losses.csv", csv)?;
            println!("pretrain: {steps} steps, final masked MSE {:.4}", losses.last().copied().unwrap_or(f64::NAN));
        }
        Command::Train { patches, loss, init, .. } => {
            inputs.insert("patches".into(), patches.clone());
            let train = load_split(patches, SplitArg::Train)?;
            let test = load_split(patches, SplitArg::Test)?;
            let mode = match loss {
                Some(LossArg::Focus) => LossMode::Focus,
                Some(LossArg::Focal) => LossMode::FocalOnly,
                None => cfg.loss,
            };
            let state = match init {
                Some(p) => {
                    inputs.insert("init".into(), p.clone());
                    ModelState::load(p)?
                }
                None => {
                    let s = pipeline::init_model(&train, cfg, cfg.seed)?;
                    pipeline::pretrain(s, &train, cfg, cfg.seed)?.0
                }
            };
            let data = pipeline::train_samples(&state, &train, cfg.label_mode)?;
            let eval = pipeline::train_samples(&state, &test, cfg.label_mode)?;
            let (state, log) = finetune(state, &data, Some(&eval), &cfg.train_config(cfg.seed), mode)?;
            state.save(run.path("model.ckpt"))?;
            run.write("metrics.csv", log.metrics_csv())?;
            println!(
                "train: {} steps, loss {:.4} -> {:.4}",
                log.step_losses.len(),
                log.step_losses.first().copied().unwrap_or(f64::NAN),
                log.step_losses.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Predict { model, patches, split, .. } => {
            inputs.insert("model".into(), model.clone());
            inputs.insert("patches".into(), patches.clone());
            let state = ModelState::load(model)?;
            let data = load_split(patches, *split)?;
            let preds = pipeline::predict_patches(&state, &data)?;
            for (p, lp) in preds.iter().zip(&data) {
                write_patch(&prediction_stack(p, lp.patch.size_p, lp.patch.center)?, run.path(&format!("{}.fps", p.sample_id)))?;
                render_png(&p.classes, &run.path(&format!("{}.png", p.sample_id)))?;
            }
            println!("predict: {} patches", preds.len());
        }
        Command::Evaluate { predictions, samples, .. } => {
            inputs.insert("predictions".into(), predictions.clone());
            inputs.insert("samples".into(), samples.clone());
            let s = read_samples(samples, cfg)?;
            let mut files: Vec<PathBuf> = fs::read_dir(predictions)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            files.retain(|p| p.extension().is_some_and(|e| e == "fps"));
            files.sort();
            let preds = files
                .iter()
                .map(|p| {
                    let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
                    prediction_from_stack(id, &read_patch(p)?)
                })
                .collect::<Result<Vec<_>>>()?;
            if preds.is_empty() {
                return Err(Error::Invalid(format!("no prediction files in {}", predictions.display())));
            }
            let report = pipeline::evaluate_predictions(&preds, &s, k)?;
            run.write("metrics.csv", report.to_csv())?;
            run.write("metrics.json", serde_json::to_string_pretty(&report)?)?;
            let e = pipeline::sample_point_ece(&preds, &s, DEFAULT_BINS)?;
            run.write("calibration.json", serde_json::to_string_pretty(&serde_json::json!({ "ece": e, "bins": DEFAULT_BINS }))?)?;
            println!("evaluate: macro F {:.4}, accuracy {:.4}, ECE {:.4}", report.macro_avg.fscore, report.macro_avg.accuracy, e);
        }
        Command::Baseline { kind, world, samples, patches, hru, .. } => {
            inputs.insert("world".into(), world.clone());
            inputs.insert("samples".into(), samples.clone());
            inputs.insert("patches".into(), patches.clone());
            let s = read_samples(samples, cfg)?;
            let (train_ids, test_ids) = read_split(patches)?;
            let train = pipeline::select(&s, &train_ids)?;
            let test = pipeline::select(&s, &test_ids)?;
            let report = match kind {
                BaselineKind::Rule => {
                    let data = load_split(patches, SplitArg::Test)?;
                    let known: Vec<SamplePoint> = train.into_iter().cloned().collect();
                    let preds = pipeline::rule_baseline(&data, &known, cfg)?;
                    pipeline::evaluate_predictions(&preds, &s, k)?
                }
                BaselineKind::Krige => pipeline::kriging_baseline(&train, &test, k)?,
                BaselineKind::Simulate => {
                    let w = World::load(world)?;
                    let table = match hru {
                        Some(p) => {
                            inputs.insert("hru".into(), p.clone());
                            HruTable::read_csv(fs::File::open(p)?)?
                        }
                        None => HruTable::default(),
                    };
                    let map = pipeline::simulate_baseline(&w, &table, &TransportParams::default())?;
                    render_png(&map, &run.path("simulate.png"))?;
                    pipeline::evaluate_world_map(&map, &test, k.min(2))?
                }
            };
            run.write("metrics.csv", report.to_csv())?;
            run.write("metrics.json", serde_json::to_string_pretty(&report)?)?;
            println!("baseline: macro F {:.4}", report.macro_avg.fscore);
        }
        Command::AblateNoiseWeights { world, samples, limit, .. } => {
            inputs.insert("world".into(), world.clone());
            inputs.insert("samples".into(), samples.clone());
            let w = World::load(world)?;
            let s = read_samples(samples, cfg)?;
            let mut configs = contam::eval::default_noise_configs();
            configs.truncate(limit.unwrap_or(configs.len()));
            let table = noise_weight_grid_search(&configs, |nw| {
                let c = PipelineConfig {
                    w_dischargers: nw.dischargers,
                    w_landcover: nw.landcover,
                    w_sample_dist: nw.sample_dist,
                    w_downstream: nw.downstream,
                    ..cfg.clone()
                };
                let ds = pipeline::build_dataset(&w, &s, &c)?;
                let (state, _) = pipeline::train_model(&ds.train, &c, LossMode::Focus, c.seed)?;
                pipeline::evaluate_predictions(&pipeline::predict_patches(&state, &ds.test)?, &s, k)
            })?;
            run.write("grid.csv", table.to_csv())?;
            run.write("grid.txt", table.to_pretty())?;
            print!("{}", table.to_pretty());
        }
        Command::AblateLoss { world, samples, seeds, .. } => {
            inputs.insert("world".into(), world.clone());
            inputs.insert("samples".into(), samples.clone());
            let w = World::load(world)?;
            let s = read_samples(samples, cfg)?;
            let ds = pipeline::build_dataset(&w, &s, cfg)?;
            let seed_list: Vec<u64> = (0..*seeds).map(|i| cfg.seed + i).collect();
            let rows = pipeline::loss_ablation(&ds, &s, cfg, &seed_list)?;
            let mut csv = String::from("seed,loss,accuracy,iou,fscore,precision,recall\n");
            for r in &rows {
                let m = &r.report.macro_avg;
                let name = if r.loss == LossMode::Focus { "focus" } else { "focal" };
                csv.push_str(&format!("{},{name},{},{},{},{},{}\n", r.seed, m.accuracy, m.iou, m.fscore, m.precision, m.recall));
            }
            run.write("ablation.csv", csv)?;
            let f = |mode: LossMode| rows.iter().filter(|r| r.loss == mode).map(|r| r.report.macro_avg.fscore).collect::<Vec<_>>();
            let (focus, focal) = pipeline::ablation_means(&rows);
            let test = match wilcoxon_signed_rank(&f(LossMode::Focus), &f(LossMode::FocalOnly)) {
                Ok(t) => serde_json::to_value(t)?,
                Err(e) => serde_json::json!({ "error": e.to_string() }),
            };
            let summary = serde_json::json!({ "focus_mean_fscore": focus, "focal_mean_fscore": focal, "wilcoxon": test });
            run.write("ablation.json", serde_json::to_string_pretty(&summary)?)?;
            println!("ablate-loss: FOCUS {focus:.4} vs focal {focal:.4}");
        }
        Command::Consistency { world, model, size, locations, .. } => {
            inputs.insert("world".into(), world.clone());
            inputs.insert("model".into(), model.clone());
            let w = World::load(world)?;
            let state = ModelState::load(model)?;
            let channels = w.input_channels();
            let overlaps = [56usize, 156].map(|o| o.min(size.saturating_sub(1)));
            let halo = cfg.landcover_radius;
            let model_trials = overlap_trials(&channels, *size, &overlaps, *locations, 0, cfg.seed, |p| {
                Ok(pipeline::predict_patch(&state, p, "")?.classes)
            })?;
            let params = cfg.rule_params();
            let rule_trials = overlap_trials(&channels, *size, &overlaps, *locations, halo, cfg.seed, |p| {
                predict_with_halo(&channels, p, halo, |q| {
                    let dirs = FlowDirGrid::from_raster(q.require(ChannelRole::Flowdir)?.clone())?;
                    contam::baselines::rule_based_predict(q, &dirs, &[], &params)
                })
            })?;
            let mut csv = String::from("predictor,overlap,row,col,agreement\n");
            for (name, trials) in [("model", &model_trials), ("rule", &rule_trials)] {
                for t in trials.iter() {
                    csv.push_str(&format!("{name},{},{},{},{}\n", t.overlap, t.row, t.col, t.agreement));
                }
                for (o, m) in mean_by_overlap(trials) {
                    println!("consistency: {name} overlap {o}: mean agreement {m:.4}");
                }
            }
            run.write("consistency.csv", csv)?;
        }
        Command::Bench { world, model, points, runs, .. } => {
            inputs.insert("world".into(), world.clone());
            inputs.insert("model".into(), model.clone());
            let w = World::load(world)?;
            let state = ModelState::load(model)?;
            let spec = contam::synth::SampleSpec {
                n: *points,
                imbalance: (1.0, 0.0),
                margin: cfg.patch_size / 2,
                ..cfg.sample_spec()
            };
            let pts: Vec<(f64, f64)> = sample_points(&w, &spec)?.iter().map(|s| s.location).collect();
            let fac: Vec<(f64, f64)> = w.facilities.iter().map(|f| (f.easting, f.northing)).collect();
            let channels = w.input_channels();
            let mut csv = String::from("mode,points,runs,threads,extraction_mean,extraction_std,inference_mean,inference_std,total_mean,total_std\n");
            let mut reports = Vec::new();
            for mode in [BenchMode::PatchPipeline, BenchMode::PerPointAggregation] {
                let r = timing_benchmark(&channels, &fac, &pts, mode, *runs, &state, cfg.patch_size)?;
                let (e, i, t) = (r.extraction_stats(), r.inference_stats(), r.total_stats());
                let name = serde_json::to_value(mode)?.as_str().unwrap_or_default().to_string();
                csv.push_str(&format!(
                    "{name},{},{},{},{},{},{},{},{},{}\n",
                    r.points, r.runs, r.threads, e.mean, e.std, i.mean, i.std, t.mean, t.std
                ));
                println!("bench: {name} extraction {:.4}s ± {:.4}, inference {:.4}s ± {:.4}", e.mean, e.std, i.mean, i.std);
                reports.push(r);
            }
            run.write("bench.csv", csv)?;
            run.write("bench.json", serde_json::to_string_pretty(&reports)?)?;
        }
    }
    Ok(())
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code: 0 on success, 1 for usage or validation errors, 2 for
/// I/O errors.
pub fn run(argv: &[String]) -> u8 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let common = cli.command.common().clone();
    let result = (|| {
        let cfg = load_config(&common)?;
        fs::create_dir_all(&common.out)?;
        let mut r = Run { out: common.out.clone(), outputs: Vec::new() };
        let mut inputs = BTreeMap::new();
        execute(&cli.command, &cfg, &mut r, &mut inputs)?;
        let manifest = Manifest {
            command: cli.command.name().into(),
            config_path: common.config.clone(),
            config: cfg.clone(),
            seed: cfg.seed,
            inputs,
            outputs: r.outputs,
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            version: env!("CARGO_PKG_VERSION"),
        };
        fs::write(common.out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok::<_, Error>(())
    })();
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_io() {
                2
            } else {
                1
            }
        }
    }
}
