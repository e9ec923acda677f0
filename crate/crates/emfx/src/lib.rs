//! Downlink electromagnetic-field exposure and radiated-energy-per-bit
//! statistics for cellular networks whose base stations follow a Poisson or
//! beta-Ginibre point process.
//!
//! The crate computes the distribution of the total downlink power density seen
//! by a user (serving signal plus interference, per radio technology) and of
//! the exposure-per-throughput ratio, three ways:
//!
//! * analytically, by building the characteristic function of the exposure and
//!   inverting it with Gil-Pelaez quadrature ([`analytic`], [`specfun`]);
//! * by Monte Carlo over point-process realizations ([`spatial`],
//!   [`propagation`], [`montecarlo`]);
//! * and, for deployment data, by fitting the beta-Ginibre repulsion parameter
//!   to an observed base-station pattern via the J function ([`fitting`]).
//!
//! The two computational routes are kept deliberately independent so each
//! validates the other; `tests/acceptance.rs` runs the full cross-validation.

pub mod analytic;
pub mod cli;
pub mod error;
pub mod fitting;
pub mod montecarlo;
pub mod propagation;
pub mod spatial;
pub mod specfun;

pub use error::{Error, Result};
