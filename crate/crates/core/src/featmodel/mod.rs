//! Class-wise feature distributions, the contrastive mapping model and
//! contrastive feature selection.

mod cfs;
mod contrastive;
mod gaussian;

pub use cfs::{cfs_select, keep_count, write_feature_csv, CfsConfig, FeatureSet, Provenance};
pub use contrastive::{
    contrastive_loss, mapped_contrastive_loss, mean_pairwise_cosine, mean_set_loss,
    train_contrastive, ContrastiveConfig, ContrastiveModel,
};
pub use gaussian::{fit_class_gaussian, ClassGaussian};
