//! Statistical primitives shared by the measures, calibration and panel analytics.

pub mod bootstrap;
pub mod ols;
pub mod proportion;
pub mod quantile;
pub mod rng;

pub use bootstrap::{clustered_bootstrap_ci, BootstrapCi, BootstrapError};
pub use ols::{design_with_intercept, ols_hc3, OlsError, OlsFit};
pub use proportion::{binomial_two_sided, wilson_interval, BinomialMethod, BinomialTest};
pub use quantile::{median, percentile, QuantileError};
