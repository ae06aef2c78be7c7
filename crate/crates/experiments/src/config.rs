//! Experiment configuration. Every field has a default, so an empty file (or
//! no file) runs the standard desk-scale protocol.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    BiasSweep,
    SampleSize,
    AgeRange,
    SexCovariate,
    Pathology,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 5] = [
        Self::BiasSweep,
        Self::SampleSize,
        Self::AgeRange,
        Self::SexCovariate,
        Self::Pathology,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::BiasSweep => "bias_sweep",
            Self::SampleSize => "sample_size",
            Self::AgeRange => "age_range",
            Self::SexCovariate => "sex_covariate",
            Self::Pathology => "pathology",
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            Self::BiasSweep => "exp1",
            Self::SampleSize => "exp2",
            Self::AgeRange => "exp3",
            Self::SexCovariate => "exp4",
            Self::Pathology => "exp5",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    /// Accepts both `exp1` and `bias_sweep` forms.
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|id| id.short() == s || id.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment `{s}`")))
    }
}

/// The shared synthetic setup: one healthy cohort per repetition, split into a
/// reference sample and a distorted moving pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    pub n_subjects: usize,
    pub n_features: usize,
    pub age_range: [f64; 2],
    pub female_fraction: f64,
    /// Sex-balanced reference sample; the rest becomes the moving pool.
    pub n_reference: usize,
    pub reference_site: String,
    pub moving_site: String,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            n_subjects: 441,
            n_features: 25,
            age_range: [18.0, 87.0],
            female_fraction: 217.0 / 441.0,
            n_reference: 100,
            reference_site: "camcan".into(),
            moving_site: "modified".into(),
        }
    }
}

/// Moving-site distortion `(A, S, M)` with `γ = gamma_scale·α` and `δ = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistortionConfig {
    pub additive: f64,
    pub slope: f64,
    pub noise: f64,
    pub gamma_scale: f64,
}

impl DistortionConfig {
    pub const fn new(additive: f64, slope: f64, noise: f64, gamma_scale: f64) -> Self {
        Self {
            additive,
            slope,
            noise,
            gamma_scale,
        }
    }
}

impl Default for DistortionConfig {
    fn default() -> Self {
        Self::new(0.8, 0.8, 1.1, 0.05)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasSweepConfig {
    pub additive_grid: Vec<f64>,
    pub slope_grid: Vec<f64>,
    pub noise_grid: Vec<f64>,
    pub gamma_scale: f64,
}

fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    // Round to 10 decimals so grid values print as typed.
    (0..=n)
        .map(|k| ((lo + k as f64 * step) * 1e10).round() / 1e10)
        .collect()
}

impl Default for BiasSweepConfig {
    fn default() -> Self {
        Self {
            additive_grid: grid(0.2, 1.8, 0.2),
            slope_grid: grid(0.0, 2.0, 0.1),
            noise_grid: grid(0.2, 1.8, 0.2),
            gamma_scale: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSizeConfig {
    pub sizes: Vec<usize>,
}

impl Default for SampleSizeConfig {
    fn default() -> Self {
        Self {
            sizes: vec![2, 4, 8, 16, 32, 64, 128, 256, 341],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgeRangeConfig {
    pub spans: Vec<f64>,
    /// Window starts step through `[first_start, last_start]`; a window
    /// `[lo, lo + span]` is used when `lo + span ≤ age_limit`.
    pub first_start: f64,
    pub last_start: f64,
    pub start_step: f64,
    pub age_limit: f64,
    pub n_train: usize,
}

impl Default for AgeRangeConfig {
    fn default() -> Self {
        Self {
            spans: grid(10.0, 70.0, 10.0),
            first_start: 20.0,
            last_start: 70.0,
            start_step: 10.0,
            age_limit: 90.0,
            n_train: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SexCovariateConfig {
    pub n_train: usize,
    pub n_reference: usize,
}

impl Default for SexCovariateConfig {
    fn default() -> Self {
        Self {
            n_train: 64,
            n_reference: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathologyConfig {
    /// `A_p = M_p` values.
    pub factors: Vec<f64>,
    pub n_healthy: usize,
    pub n_pathological: usize,
    pub gamma_scale: f64,
    pub label: String,
}

impl Default for PathologyConfig {
    fn default() -> Self {
        Self {
            factors: grid(0.8, 1.2, 0.05),
            n_healthy: 100,
            n_pathological: 100,
            gamma_scale: 0.1,
            label: "patho".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub repetitions: usize,
    pub seed: u64,
    pub cohort: CohortConfig,
    /// Distortion of the moving site in the sample-size, age-range, sex and
    /// pathology experiments.
    pub distortion: DistortionConfig,
    pub bias_sweep: BiasSweepConfig,
    pub sample_size: SampleSizeConfig,
    pub age_range: AgeRangeConfig,
    pub sex_covariate: SexCovariateConfig,
    pub pathology: PathologyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            repetitions: 30,
            seed: 2024,
            cohort: CohortConfig::default(),
            distortion: DistortionConfig::default(),
            bias_sweep: BiasSweepConfig::default(),
            sample_size: SampleSizeConfig::default(),
            age_range: AgeRangeConfig::default(),
            sex_covariate: SexCovariateConfig::default(),
            pathology: PathologyConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        let c = &self.cohort;
        if c.n_reference == 0 || c.n_reference >= c.n_subjects {
            return Err(Error::Config(
                "reference sample must be a proper, non-empty subset".into(),
            ));
        }
        if c.reference_site == c.moving_site {
            return Err(Error::Config(
                "reference and moving sites need distinct names".into(),
            ));
        }
        Ok(())
    }

    /// Size of the moving pool left after the reference sample is drawn.
    pub fn pool_size(&self) -> usize {
        self.cohort.n_subjects - self.cohort.n_reference
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids_print_cleanly() {
        assert_eq!(
            grid(0.2, 1.8, 0.2),
            vec![0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8]
        );
        assert_eq!(grid(0.8, 1.2, 0.05).len(), 9);
        assert!(grid(0.0, 2.0, 0.1).contains(&1.5));
    }

    #[test]
    fn ids_parse_both_forms() {
        assert_eq!(
            "exp3".parse::<ExperimentId>().unwrap(),
            ExperimentId::AgeRange
        );
        assert_eq!(
            "pathology".parse::<ExperimentId>().unwrap(),
            ExperimentId::Pathology
        );
        assert!("exp9".parse::<ExperimentId>().is_err());
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg =
            ExperimentConfig::from_toml_str("repetitions = 5\n[sample_size]\nsizes = [4, 64]\n")
                .unwrap();
        assert_eq!(cfg.repetitions, 5);
        assert_eq!(cfg.sample_size.sizes, vec![4, 64]);
        assert_eq!(cfg.cohort.n_reference, 100);
        assert!(ExperimentConfig::from_toml_str("repetitions = 0").is_err());
        assert!(ExperimentConfig::from_toml_str("bogus = 1").is_err());
    }
}
