//! Experiment plumbing: configuration, toy data, end-to-end runs and
//! loss-landscape slices.

mod config;
mod dataset;
mod landscape;
mod runner;

pub use config::{ExperimentConfig, LastTask};
pub use dataset::{gen_toy_dataset, train_count, ToyDataset};
pub use landscape::{
    first_layer_slice, full_slice, loss_landscape_slice, random_directions, LandscapeSlice,
};
pub use runner::{
    dataset_for, execute, exit_code, inversion_config, prepare, run_experiment,
    run_experiment_file, Prepared,
};
