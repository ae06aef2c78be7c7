//! Empirical-Bayes harmonization of multi-site scalar measurements.
//!
//! The crate covers cohort tables and covariate schemas ([`data`]), the ComBAT
//! estimation chain ([`combat`]), reference-anchored pairwise harmonization
//! ([`pairwise`]), goodness-of-fit measures ([`metrics`]) and a synthetic
//! cohort generator with controlled site distortions ([`synth`]).

pub mod combat;
pub mod data;
mod error;
pub mod metrics;
pub mod pairwise;
pub mod synth;

pub use error::{Error, Result};
