//! Kernels, coefficient schemes and equation specifications. Pure data; no
//! randomness lives here.

mod beta;
mod kernel;
mod sequence;
mod spec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use beta::BetaScheme;
pub use kernel::{uniform_grid, Kernel, KernelShape};
pub use sequence::{AlphaScheme, Sequence};
pub use spec::EquationSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("kernel argument must be finite, got {0}")]
    NonFiniteArgument(f64),
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("declared kernel constant violated: {0}")]
    ConstantViolated(String),
    #[error("invalid coefficient scheme: {0}")]
    InvalidScheme(String),
    #[error("beta lag j must be at least 1")]
    ZeroLag,
    #[error("invalid equation: {0}")]
    InvalidSpec(String),
    #[error("{family} equations need the kernel constant {constant}")]
    MissingConstant {
        family: &'static str,
        constant: &'static str,
    },
}

/// Budget for evaluating infinite series.
///
/// A series stops at whichever comes first: `max_terms` terms, or a tail
/// estimate below `abs_tail_tol`. Nested sums are additionally capped at a
/// total lag of `max_total_lag`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruncationPolicy {
    pub max_terms: usize,
    pub abs_tail_tol: f64,
    pub max_total_lag: usize,
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        TruncationPolicy {
            max_terms: 1_000_000,
            abs_tail_tol: 1e-12,
            max_total_lag: 4096,
        }
    }
}

/// A series value with an estimate of what was left out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub value: f64,
    pub remainder: f64,
    pub converged: bool,
}

impl TailEstimate {
    pub fn exact(value: f64) -> Self {
        TailEstimate {
            value,
            remainder: 0.0,
            converged: true,
        }
    }

    pub fn divergent(partial: f64) -> Self {
        TailEstimate {
            value: partial,
            remainder: f64::INFINITY,
            converged: false,
        }
    }
}

/// Either scheme kind, for [`tail_energy`].
#[derive(Debug, Clone, Copy)]
pub enum SchemeRef<'a> {
    Alpha(&'a Sequence),
    Beta(&'a BetaScheme),
}

/// `A^2_k = sum_{i >= k} alpha_i^2`, or `B^2_k` for a one-index beta scheme
/// (`k` is clamped to at least 1 there). General tables report the energy of
/// lags `>= k` summed over all rows within the policy's lag cap.
pub fn tail_energy(scheme: SchemeRef<'_>, k: usize, policy: &TruncationPolicy) -> TailEstimate {
    match scheme {
        SchemeRef::Alpha(a) => a.sq_tail(k),
        SchemeRef::Beta(b) => b.tail_energy(k).unwrap_or_else(|| {
            let lag_cap = policy.max_total_lag.min(policy.max_terms);
            let mut s = 0.0;
            for i in 0..lag_cap {
                for j in k.max(1)..=lag_cap.saturating_sub(i) {
                    let v = b.at(i, j);
                    s += v * v;
                }
            }
            TailEstimate::exact(s)
        }),
    }
}
