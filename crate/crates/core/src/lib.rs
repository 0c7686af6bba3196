//! Foot-trajectory regression from 6-axis IMU data with convolutional
//! networks: ingestion, windowing, training and trajectory evaluation.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the common instantiations.

pub mod config;
pub mod error;
pub mod gaitsim;
pub mod gradcheck;
pub mod imu;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod scalar;
pub mod tensor;
pub mod training;
pub mod trajectory;

pub use error::Error;

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub use scalar::Scalar;

/// Channel-scale factor of a model configuration.
pub type Scale = num_rational::Ratio<u32>;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
pub type Regressor32 = model::Regressor<f32>;
pub type Regressor64 = model::Regressor<f64>;
