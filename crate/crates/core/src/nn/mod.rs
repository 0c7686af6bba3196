//! Convolutional and dense layers with hand-written backward passes.

mod activation;
mod batchnorm;
mod conv;
mod dense;
mod dropout;
mod pool;

pub use activation::{relu_backward, relu_forward};
pub(crate) use activation::{relu_backward_in_place, relu_in_place};
pub use batchnorm::{BatchNormLayer, BnCache, BnGrads, DEFAULT_EPSILON, DEFAULT_MOMENTUM};
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvLayer, KERNEL};
pub use dense::{dense_backward, dense_forward, DenseGrads, DenseLayer};
pub use dropout::{DropoutLayer, DEFAULT_DROPOUT};
pub use pool::{maxpool_time_backward, maxpool_time_forward, PoolIndex};

/// Train mode uses batch statistics and dropout masks; infer mode is deterministic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Number of trainable scalars.
pub trait ParamCount {
    fn param_count(&self) -> usize;
}
