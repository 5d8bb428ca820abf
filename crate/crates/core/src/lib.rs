//! Learned lossless image codec.
//!
//! An autoencoder with a hyperprior turns an RGB image into integer latents.
//! Pixels, latents and hyper-latents are then range coded under discretized
//! Gaussian mixtures whose parameters come from the hyperprior and from
//! masked (causal) convolutions over already decoded symbols.
//!
//! Everything runs in `f64` on a small reverse-mode autodiff engine, and
//! every probability table handed to the coder is rebuilt bit-identically by
//! the decoder.

pub mod autodiff;
pub mod codec;
pub mod coder;
pub mod entropy;
pub mod gradcheck;
pub mod network;
pub mod train;

pub use autodiff::{Graph, Tensor, TensorError, Var};
pub use codec::{compress, decompress, decompress_bytes, CodecError, CodecReport, Image, ImageError};
pub use coder::{Bitstream, CoderError};
pub use entropy::SymbolGrid;
pub use network::{ModelConfig, ModelWeights, NetworkError};
pub use train::{TrainConfig, TrainError};
