//! Small differentiable feed-forward engine: layer units, forward passes
//! with intermediate capture, reverse-mode gradients, per-level input
//! statistics and Adam.

mod checkpoint;
mod layer;
mod loss;
mod network;
mod optim;
mod stats;
mod tensor;

pub use checkpoint::{load_network, save_network, MAGIC};
pub use layer::{
    Activation, Backbone, Dense, DenseGrad, ForwardCache, Layer, LayerKind, LEAKY_SLOPE,
};
pub use loss::{mse_rows, softmax_cross_entropy};
pub use network::{
    ClassificationHead, GradAt, HeadGrad, HeadMode, LossSpec, NetForward, Network, ParamGrads,
};
pub use optim::{optimizer_step, NetOptimizer, OptimizerState};
pub use stats::{column_moments, LayerStats, STD_FLOOR};
pub use tensor::Tensor;

pub(crate) use tensor::{dot, norm};
