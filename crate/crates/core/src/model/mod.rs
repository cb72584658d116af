//! Per-cell segmentation network with masked-autoencoder pretraining and
//! AdamW fine-tuning.

pub mod features;
pub mod layers;
pub mod net;
pub mod optim;
pub mod train;

pub use features::{ChannelStats, FeatureSpec};
pub use net::{ModelState, NetConfig, Tensor, TensorInfo, CHECKPOINT_MAGIC, SIZE_MULTIPLE};
pub use optim::{adamw_step, lr_at, Moments, Schedule, TrainConfig};
pub use train::{
    block_mask, class_weights, classify, evaluate_pixels, finetune, masked_reconstruction_mse, pretrain_mae, EpochMetrics,
    LossMode, TrainLog, TrainSample,
};
