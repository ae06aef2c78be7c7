//! The per-repetition protocol shared by all experiments: one healthy cohort
//! split into a sex-balanced reference sample and a distorted moving pool
//! holding the remaining subjects.

use harmon_core::data::{sample_indices, CohortTable, CovariateSchema};
use harmon_core::metrics::{evaluate_pairwise, table_mad, FitReport};
use harmon_core::pairwise::{fit_pairwise, harmonize_moving, PairwiseModel, PairwiseOptions};
use harmon_core::synth::{generate_cohort, inject_bias, BiasSpec, PopulationSpec, SyntheticCohort};
use harmon_core::Result;

use crate::config::{DistortionConfig, ExperimentConfig};
use crate::seeds::TrialSeeds;

pub struct Setup {
    /// Reference-site subjects, undistorted.
    pub reference: SyntheticCohort,
    /// The remaining subjects as measured at the moving site.
    pub pool: SyntheticCohort,
    pub bias: BiasSpec,
}

pub fn population(cfg: &ExperimentConfig, seed: u64) -> PopulationSpec {
    let c = &cfg.cohort;
    let mut spec = PopulationSpec::md_like(&c.reference_site, c.n_subjects, c.n_features, seed);
    spec.age_range = c.age_range;
    spec.female_fraction = c.female_fraction;
    spec
}

pub fn setup(
    cfg: &ExperimentConfig,
    seeds: &TrialSeeds,
    distortion: &DistortionConfig,
) -> Result<Setup> {
    let spec = population(cfg, seeds.cohort);
    let cohort = generate_cohort(&spec)?;
    let reference_idx = sample_indices(
        &cohort.table,
        cfg.cohort.n_reference,
        true,
        None,
        seeds.reference,
    )?;
    let pool_idx = complement(cohort.len(), &reference_idx);
    let bias = BiasSpec::for_population(
        &spec,
        distortion.additive,
        distortion.slope,
        distortion.noise,
        distortion.gamma_scale,
    );
    let pool = inject_bias(&cohort.select(&pool_idx), &bias, &cfg.cohort.moving_site)?;
    Ok(Setup {
        reference: cohort.select(&reference_idx),
        pool,
        bias,
    })
}

/// Sorted indices in `0..n` not present in the sorted `taken`.
pub fn complement(n: usize, taken: &[usize]) -> Vec<usize> {
    (0..n).filter(|i| taken.binary_search(i).is_err()).collect()
}

pub fn fit_schema(with_sex: bool) -> CovariateSchema {
    let schema = CovariateSchema::age_sex();
    if with_sex {
        schema
    } else {
        schema.without(&[harmon_core::data::SEX])
    }
}

pub fn fit(
    reference: &CohortTable,
    moving: &CohortTable,
    schema: &CovariateSchema,
) -> Result<PairwiseModel> {
    fit_pairwise(reference, moving, schema, &PairwiseOptions::default())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Feature-averaged MAD between the harmonized rows and their true values.
pub fn harmonized_mad(model: &PairwiseModel, rows: &SyntheticCohort) -> Result<f64> {
    let harmonized = harmonize_moving(model, &rows.table)?;
    Ok(mean(&table_mad(&harmonized, &rows.truth()?)?))
}

/// Distances of `rows` to the reference population, with MAD against truth.
pub fn goodness_of_fit(
    model: &PairwiseModel,
    reference: &CohortTable,
    rows: &SyntheticCohort,
) -> Result<FitReport> {
    evaluate_pairwise(model, reference, &rows.table, Some(&rows.truth()?))
}

pub fn bd_summary(report: &FitReport) -> (f64, f64, f64) {
    let max_after = report
        .features
        .iter()
        .map(|f| f.bd_after)
        .fold(0.0, f64::max);
    (report.mean_bd_before(), report.mean_bd_after(), max_after)
}
