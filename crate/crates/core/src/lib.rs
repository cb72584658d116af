//! Surface-water contamination prediction from sparse point samples.
//!
//! The crate covers the whole pipeline:
//!
//! - [`raster`]: grids, the FPS1 patch format, patch extraction, rasterization and
//!   the exact Euclidean distance transform
//! - [`hydro`]: D8 flow direction, flow accumulation and downstream tracing
//! - [`labeling`]: hazard index, dense label expansion and expert noise masks
//! - [`loss`]: weighted cross-entropy, focal loss and the noise-weighted focal loss
//! - [`model`]: a small convolutional encoder-decoder, masked-autoencoder pretraining,
//!   AdamW and the warmup/polynomial schedule
//! - [`baselines`]: rule-based prediction, ordinary Kriging, pollutant transport
//! - [`eval`]: metrics, calibration, consistency, Wilcoxon, grid search, timing
//! - [`synth`]: deterministic synthetic worlds, sampling and disjoint splits
//! - [`pipeline`]: the glue used by the CLI and the acceptance suite

pub mod baselines;
pub mod error;
pub mod eval;
pub mod hydro;
pub mod labeling;
pub mod loss;
pub mod model;
pub mod pipeline;
pub mod raster;
pub mod synth;

pub use error::{Error, Result};
