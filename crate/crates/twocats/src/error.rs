//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by estimators, model evaluation, training, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// Parameter outside the valid domain of a family or routine.
    #[error("domain: {0}")]
    Domain(String),

    /// Caller violated an interface contract (mismatched lengths, empty input).
    #[error("contract: {0}")]
    Contract(String),

    /// Data has no spread where spread is required (e.g. constant KDE sample).
    #[error("degenerate data: {0}")]
    Degenerate(String),

    /// A non-finite value appeared during evaluation or training.
    #[error("numeric: {0}")]
    Numeric(String),

    /// Root finding failed to converge.
    #[error("root find: {msg} (last v={last_v}, residual={residual}, iters={iters})")]
    RootFind {
        msg: String,
        last_v: f64,
        residual: f64,
        iters: usize,
    },

    /// Training aborted; the trace collected so far is attached.
    #[error("training aborted at epoch {epoch}: {msg}")]
    TrainAbort {
        epoch: usize,
        msg: String,
        trace: Box<crate::training::TrainTrace>,
    },

    /// Malformed CSV, config, or model file.
    #[error("parse: {0}")]
    Parse(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
