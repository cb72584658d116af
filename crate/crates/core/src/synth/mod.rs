//! Deterministic synthetic worlds, sparse samples and disjoint splits.

mod noise;
mod sampling;
mod split;
mod world;

pub use noise::{fbm, fbm_field, splitmix64};
pub use sampling::{sample_points, SampleSpec};
pub use split::{disjoint_split, read_split_csv, windows_overlap, write_split_csv};
pub use world::{generate_world, Facility, World, WorldSpec, FACILITIES_FILE, WORLD_FILE};
