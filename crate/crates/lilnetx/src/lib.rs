//! Desk-scale toolkit for training compact CNNs that are jointly optimized
//! for classification accuracy, coded size on disk, and slice-structured
//! sparsity that block-sparse convolution can exploit.
//!
//! The pipeline keeps every compressible weight tensor as a continuous
//! surrogate in a quantized latent space. Rounded latents are decoded by a
//! small per-group linear transform into the actual layer weights, a learned
//! factorized density scores the latents for a differentiable rate penalty,
//! and zero-mean plus group-lasso priors push entire latent rows (one row per
//! K×K weight slice) to exact zero. A deterministic range coder turns the
//! trained latents into a `.lnx` file.

pub mod arch;
pub mod codec;
pub mod config;
pub mod data;
pub mod entropy;
pub mod layers;
pub mod loss;
pub mod net;
pub mod optim;
pub mod reparam;
pub mod scalar;
pub mod sparse;
pub mod sparsity;
pub mod sweep;
pub mod tensor;
pub mod train;


pub use scalar::Scalar;
pub use tensor::Tensor4;

/// Unified error type for the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch at layer {layer}: {detail}")]
    ShapeMismatch { layer: usize, detail: String },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("codec error: {0}")]
    Codec(String),
    #[error("training aborted: {0}")]
    Training(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
