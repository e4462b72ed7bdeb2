//! Data-free continual learning on small dense networks: per-layer model
//! inversion, class-wise feature modeling with contrastive feature
//! selection, rotation-based feature projection and class-incremental
//! training loops with synthetic replay.

pub mod clharness;
pub mod error;
pub mod experiment;
pub mod featmodel;
pub mod inversion;
pub mod netcore;
pub mod projection;
pub mod seed;

pub use error::{Error, Result};
