//! Dense MLPs with hand-written reverse-mode gradients.
//!
//! Parameters live in one flat vector per network, laid out layer by layer
//! as a row-major `out x in` weight matrix followed by the bias vector. The
//! same layout is used by Adam, soft target updates and the wire blob.

mod adam;
mod blob;
mod linalg;
mod mlp;

pub use adam::{Adam, AdamConfig, AdamState};
pub use blob::{BlobError, ParamBlob, BLOB_FORMAT_VERSION, BLOB_HEADER_LEN, BLOB_MAGIC};
pub use linalg::Scalar;
pub use mlp::{ForwardCache, Mlp, MlpSpec, OutputActivation};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("input has {got} values, expected a multiple of {expected}")]
    InputShape { expected: usize, got: usize },
    #[error("gradient has {got} values, expected {expected}")]
    GradientShape { expected: usize, got: usize },
    #[error("network shapes differ")]
    ShapeMismatch,
    #[error("non-finite gradient, update skipped")]
    NonFiniteGradient,
    #[error("forward cache does not match this network")]
    StaleCache,
}
