//! The two sample applications: a star signal pipeline and a mesh game.

pub mod pipeline;
pub mod rooms;
pub mod signal;

use thiserror::Error;

use crate::runtime::RuntimeError;
use crate::transport::TransportError;

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("real and imaginary parts differ in length ({real} vs {imag})")]
    Mismatched { real: usize, imag: usize },
    #[error("no samples")]
    Empty,
    #[error("line {line}: cannot read samples from {text:?}")]
    BadSignal { line: usize, text: String },
    #[error("{0}")]
    Invalid(String),
    #[error("demo refused to start: {0}")]
    Refused(String),
    #[error("demo stalled: {0}")]
    Stalled(String),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}
