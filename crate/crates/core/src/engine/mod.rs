//! Truncated path simulation.
//!
//! Each `X_t` is computed from the coefficient window `g_{t-k,t}`, `k = 0..=M`,
//! and the innovations `zeta_{t-M..=t}`. Innovations are addressed by
//! `(seed, replicate, t)` so paths are reproducible independently of the
//! thread layout.

pub mod io;
mod recursion;
mod rng;
mod simulate;

use thiserror::Error;

use crate::model::ModelError;
use crate::solvability::SolvabilityError;

pub(crate) use recursion::dot as dot_product;
pub use recursion::{coefficient_slice, cold_start_slice, CoefficientSlice};
pub use rng::{Distribution, InnovationStream};
pub use simulate::{
    admit, linear_filter, project, simulate, simulate_replicate, workers_from_env, FilteredPath, Path, PathEcho,
    SimConfig,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solvability(#[from] SolvabilityError),
    #[error("simulation refused: {0}")]
    Refused(String),
    #[error("non-finite coefficient at t = {t}, lag {k}")]
    NonFinite { t: i64, k: usize },
    #[error("this family needs the previous coefficient slices")]
    MissingHistory,
    #[error("path was simulated without retained slices")]
    NotRetained,
    #[error("out of window: {0}")]
    OutOfWindow(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for EngineError {
    fn from(e: std::io::Error) -> Self {
        EngineError::Io(e.to_string())
    }
}
