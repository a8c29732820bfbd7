//! Minimal reverse-mode differentiation over dense arrays.
//!
//! All model objectives are built on [`Tape`], which evaluates eagerly and
//! supports a reverse sweep producing per-parameter gradients. Everything is
//! 64-bit; gradient checks rely on it.

mod grad_check;
mod tape;
mod tensor;

use thiserror::Error;

pub use grad_check::{grad_check, GradCheckEntry, GradCheckReport};
pub use tape::{Gradients, Tape, Var, ACOS_MARGIN, LOG_FLOOR};
pub use tensor::{ParamStore, Tensor};

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced at node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("unknown parameter '{0}'")]
    UnknownParam(String),
    #[error("degenerate value in {what}: {detail}")]
    Degenerate { what: &'static str, detail: String },
}

pub type Result<T> = std::result::Result<T, DiffError>;
