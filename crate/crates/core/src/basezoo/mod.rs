//! Synthetic classification data, base-classifier pretraining with trajectory
//! checkpoints, and the trajectory subsampler.

mod corrupt;
mod dataset;
mod pretrain;
mod sampling;

pub use corrupt::{corrupt, CorruptionLevel};
pub use dataset::{evaluate_classifier, make_dataset, DatasetConfig, DatasetKind, Split, SynthDataset};
pub use pretrain::{
    pretrain_and_checkpoint, pretrain_from, save_epoch_indices, PretrainConfig, PretrainRun, TrajectoryTensor,
};
pub use sampling::{sample_trajectories, SampleConfig, NOISE_STD};
