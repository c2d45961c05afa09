//! Gumbel regression losses, their Maclaurin-expanded stabilization, and
//! small exact experiments around them.
//!
//! * [`losses`]: Gumbel, clipped Gumbel, expanded Gumbel, L2 and expectile
//!   losses with analytic derivatives.
//! * [`distributions`]: Gumbel sampling and loss-implied error densities.
//! * [`regression`]: scalar Gumbel regression under matched and mismatched
//!   temperatures.
//! * [`mdp`]: tabular MDPs with exact behavior-value and soft-value solvers.
//! * [`mxql`]: in-sample tabular value learning with any loss.
//! * [`stats`]: summaries and Welch's t-test.

pub mod distributions;
pub mod error;
pub mod grid;
pub mod losses;
pub mod mdp;
pub mod mxql;
pub mod quadrature;
pub mod regression;
pub mod rng;
pub mod stats;

pub use distributions::{DensityCurve, GumbelParams};
pub use error::{Error, Result};
pub use grid::Grid;
pub use losses::{LossSpec, LossVariant};
