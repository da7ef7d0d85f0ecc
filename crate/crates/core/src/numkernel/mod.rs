//! Dense numeric substrate for the neural click models: matrices, activations,
//! a GRU cell with exact reverse mode, the Adam optimizer and gradient checks.

mod activation;
mod adam;
mod gradcheck;
mod gru;
mod params;
mod tensor;

pub use activation::{log_softmax, sigmoid, softmax, softplus, tanh};
pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, Probe, REL_ERR_FLOOR};
pub use gru::{GruCache, GruCell};
pub use params::{Param, ParamId, ParamStore};
pub use tensor::{affine, affine_backward, axpy, dot, AffineCache, Matrix};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("cache does not belong to this {0} call")]
    StaleCache(&'static str),

    #[error("unknown parameter {0}")]
    UnknownParam(String),

    #[error("duplicate parameter {0}")]
    DuplicateParam(String),
}

impl KernelError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        KernelError::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }
}
