//! From sparse sample points to dense label masks and per-pixel label confidence.

mod expand;
mod noise;
mod samples;

pub use expand::{expand_ground_truth, samples_in_patch, LabelMode};
pub use noise::{
    noise_mask, p_dischargers, p_downstream, p_landcover, p_sample_dist, DownstreamEvidence, NoiseParams,
    NoiseWeights,
};
pub use samples::{classify_sample, hazard_index, read_samples_csv, write_samples_csv, Compound, SamplePoint};
