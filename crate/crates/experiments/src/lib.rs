//! Reproducible stress tests for pairwise harmonization on synthetic cohorts:
//! site distortion sweeps, training sample size, training age range, sex
//! composition and pathological contamination.
//!
//! ```no_run
//! use harmon_experiments::{run, ExperimentConfig, ExperimentId};
//!
//! let mut cfg = ExperimentConfig::default();
//! cfg.repetitions = 5;
//! let report = run(ExperimentId::SampleSize, &cfg).unwrap();
//! report.write_csv(std::io::stdout()).unwrap();
//! ```

pub mod config;
mod error;
pub mod report;
pub mod seeds;
mod sweeps;
pub mod trial;

pub use config::{ExperimentConfig, ExperimentId};
pub use error::{Error, Result};
pub use report::{Aggregate, ExperimentReport, Measurement, Metrics, Outcome, SweepPoint};
pub use sweeps::{points, run, run_point};
