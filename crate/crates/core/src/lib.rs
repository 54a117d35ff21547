//! Score-based CUSUM monitoring of risk prediction models whose outcomes are
//! censored by confounding medical interventions.
//!
//! The crate is `no_std` (it needs `alloc`). It contains everything that is
//! pure computation:
//!
//! - [`models`]: the logit-shift and risk-shift outcome models and their
//!   scores and information matrices at the null shift,
//! - [`estimation`]: Newton–Raphson maximum likelihood for the nuisance
//!   parameter (plain and ridge-penalized),
//! - [`chart`]: the score CUSUM chart statistic,
//! - [`dcl`]: the parametric-bootstrap ensemble and alpha-spending dynamic
//!   control limits,
//! - [`monitor`]: the end-to-end monitoring procedure,
//! - [`simgen`] and [`learners`]: the data generator and the risk models
//!   being monitored,
//! - [`experiments`]: single-replicate pipelines, the naive misclassification
//!   CUSUM and summary metrics.
//!
//! File formats, the parallel replicate runner and the CLI live in the
//! `cmi-cusum` crate.

#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod chart;
pub mod dcl;
pub mod error;
pub mod estimation;
pub mod experiments;
pub mod learners;
pub mod linalg;
pub mod models;
pub mod monitor;
pub mod rng;
pub mod simgen;

pub use error::{Error, Result};
