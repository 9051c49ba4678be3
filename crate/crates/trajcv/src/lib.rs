//! Trajectory-wise control variates for policy-gradient estimation.
//!
//! The crate bundles finite-horizon environments (tabular, cart-pole, LQG),
//! stochastic policies with analytic scores, value/dynamics critics with
//! quadratic-in-action Q approximators, four gradient estimators (vanilla,
//! state CV, state-action CV, trajectory-wise CV), exact and sampled
//! law-of-total-variance decompositions, an ordering-residue enumerator,
//! and a natural-gradient trainer. Everything is seed-deterministic.

pub mod config;
pub mod critic;
pub mod env;
pub mod error;
pub mod estimator;
pub mod oracle;
pub mod output;
pub mod policy;
pub mod rng;
pub mod train;
pub mod variance;

pub use error::{Error, Result};
