//! Small reverse-mode autodiff engine over dense `f64` tensors.
//!
//! A [`Graph`] records every op applied to its [`Var`]s; [`Graph::backward`]
//! sweeps the tape once in reverse. Only the operator set the codec networks
//! need is provided: convolutions (plain, transposed, causally masked),
//! elementwise maps, channel concat/slice, grouped softmax, and reductions.
//! Fused likelihood ops live next to the entropy models and plug in through
//! [`Graph::record`].

mod conv;
mod graph;
mod ops;
mod tensor;


pub(crate) use conv::conv2d_point;
pub use conv::{causal_mask, MASKED_KERNELS};
pub use graph::{BackwardFn, Graph, Var};
pub use ops::LEAKY_SLOPE;
pub(crate) use ops::{leaky_relu, sigmoid, softmax_strided, softplus};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape contract violated: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward needs a single-element loss, got {numel} elements")]
    NonScalarLoss { numel: usize },
    #[error("graph already consumed by backward; run a new forward pass")]
    GraphConsumed,
}
