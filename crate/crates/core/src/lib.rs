//! Gated test-time training at desk scale.
//!
//! A TTT-Linear fast-weight layer with self-supervised inner-loop updates, a
//! training-free reconstruction-loss gate with EMA threshold control, baseline
//! gating policies (skip / dense / random / oracle-greedy), and an evaluation
//! harness that measures oracle recovery, decision accuracy, signal/advantage
//! correlations, and a relative-FLOPs ledger over byte-level corpora.

pub mod backbone;
pub mod cli;
pub mod gating;
pub mod harness;
pub mod numerics;
pub mod report;
pub mod rng;
pub mod ttt_layer;
pub mod weights_io;

/// Crate-wide error type.
///
/// The CLI maps variants onto exit codes: config errors exit 2, numeric
/// failures exit 3, I/O failures exit 4.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("undefined quantity: {0}")]
    Undefined(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Non-finite error tagged with where in the stream it happened.
    pub fn non_finite_at(context: &str, sequence_id: usize, chunk_index: usize) -> Self {
        Error::NonFinite(format!(
            "{context} (sequence {sequence_id}, chunk {chunk_index})"
        ))
    }
}
