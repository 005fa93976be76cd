//! Tensor arithmetic with reverse-mode differentiation.

pub mod exact;
mod gradcheck;
mod graph;
pub mod ops;
mod params;
mod tensor;

pub use gradcheck::{gradcheck, GradcheckReport};
pub use graph::{sigmoid, Activation, Gradients, Graph, Var};
pub use ops::{Dense, Mlp};
pub use params::ParamStore;
pub use tensor::Tensor;
