//! A physics-attention transformer whose blocks blend
//! slice self-attention with gated cross-attention to a multi-scale
//! geometry context built from ball queries.
//!
//! The numeric core is generic over [`Scalar`]; [`f32`] is the training
//! default and [`f64`] is used for gradient checks and oracles.

pub mod context;
pub mod data;
pub mod error;
pub mod gale;
pub mod geometry;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Single-precision tensor.
pub type Tensor32 = numerics::Tensor<f32>;
/// Double-precision tensor.
pub type Tensor64 = numerics::Tensor<f64>;
/// Single-precision parameter store (training default).
pub type ParamStore32 = numerics::ParamStore<f32>;
/// Double-precision parameter store (gradient checks).
pub type ParamStore64 = numerics::ParamStore<f64>;

/// Crate version embedded in checkpoints and run directories.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
