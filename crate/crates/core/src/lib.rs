//! Simulation and verification of projective stochastic equations.
//!
//! * [`model`]: kernels, coefficient schemes, equation specs.
//! * [`solvability`]: existence series and moment bounds.
//! * [`engine`]: coefficient recursions and truncated path simulation.
//! * [`oracle`]: brute-force nested Volterra evaluation on small windows.
//! * [`diagnostics`]: autocovariances, decay fits, partial-sum scaling.

#![allow(clippy::needless_range_loop)]

pub mod diagnostics;
pub mod engine;
pub mod model;
pub mod oracle;
pub mod solvability;
pub mod stats;
