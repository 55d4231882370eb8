use crate::prelude::*;

/// Errors produced anywhere in the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("rejected input: {0}")]
    InvalidInput(String),
    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("simulation diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },
    #[error("non-finite loss at epoch {epoch}, batch {batch} (node {node}, magnitude {magnitude})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        node: usize,
        magnitude: f64,
    },
}

impl Error {
    pub(crate) fn config(field: &str, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
