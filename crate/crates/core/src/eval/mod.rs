//! Evaluation: metrics, calibration, consistency, significance testing, noise
//! weight search and timing.

pub mod bench;
pub mod calibration;
pub mod consistency;
pub mod grid_search;
pub mod metrics;
pub mod wilcoxon;

pub use bench::{timing_benchmark, BenchMode, BenchReport, Timing};
pub use calibration::{ece, reliability_bins, CalibrationBin, DEFAULT_BINS};
pub use consistency::{consistency_agreement, crop, mean_by_overlap, overlap_trials, predict_with_halo, OverlapTrial};
pub use grid_search::{default_noise_configs, noise_weight_grid_search, GridRow, GridTable};
pub use metrics::{sample_point_metrics, ClassMetrics, Confusion, MetricReport};
pub use wilcoxon::{wilcoxon_signed_rank, WilcoxonResult};
