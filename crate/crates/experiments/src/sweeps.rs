//! The five stress tests. Each defines its sweep points and the work done in
//! one repetition at one point; [`run`] executes the grid.

use rayon::prelude::*;

use harmon_core::data::{sample_indices, CovariateSchema, AGE, SEX};
use harmon_core::pairwise::{fit_pairwise, harmonize_moving, PairwiseOptions, RowFilter};
use harmon_core::synth::{mark_pathology, PathologySpec, DIAGNOSIS, HEALTHY};
use harmon_core::{Error as CoreError, Result as CoreResult};

use crate::config::{DistortionConfig, ExperimentConfig, ExperimentId};
use crate::error::Result;
use crate::report::{
    Composition, ExperimentReport, Factor, Measurement, Metrics, Outcome, ReferenceStrategy,
    Regime, SweepPoint,
};
use crate::seeds::{repetition_seed, TrialSeeds};
use crate::trial::{
    bd_summary, complement, fit, fit_schema, goodness_of_fit, harmonized_mad, setup,
};

pub fn points(id: ExperimentId, cfg: &ExperimentConfig) -> Vec<SweepPoint> {
    match id {
        ExperimentId::BiasSweep => {
            let b = &cfg.bias_sweep;
            let mut pts = Vec::new();
            pts.extend(b.additive_grid.iter().map(|&a| SweepPoint::Bias {
                factor: Factor::Additive,
                additive: a,
                slope: 1.0,
                noise: 1.0,
            }));
            pts.extend(b.slope_grid.iter().map(|&s| SweepPoint::Bias {
                factor: Factor::Slope,
                additive: 1.0,
                slope: s,
                noise: 1.0,
            }));
            pts.extend(b.noise_grid.iter().map(|&m| SweepPoint::Bias {
                factor: Factor::Noise,
                additive: 1.0,
                slope: 1.0,
                noise: m,
            }));
            pts
        }
        ExperimentId::SampleSize => cfg
            .sample_size
            .sizes
            .iter()
            .map(|&n| SweepPoint::SampleSize { n })
            .collect(),
        ExperimentId::AgeRange => {
            let a = &cfg.age_range;
            let mut pts = Vec::new();
            for &span in &a.spans {
                let mut lo = a.first_start;
                while lo <= a.last_start + 1e-9 && lo + span <= a.age_limit + 1e-9 {
                    for strategy in [ReferenceStrategy::Full, ReferenceStrategy::AgeMatched] {
                        pts.push(SweepPoint::AgeRange { span, lo, strategy });
                    }
                    lo += a.start_step;
                }
            }
            pts
        }
        ExperimentId::SexCovariate => {
            use Composition::*;
            let scenarios = [
                (Balanced, Balanced),
                (MaleOnly, Balanced),
                (MaleOnly, MaleOnly),
                (MaleOnly, FemaleOnly),
            ];
            let mut pts = Vec::new();
            for (moving, reference) in scenarios {
                for with_covariate in [false, true] {
                    pts.push(SweepPoint::Sex {
                        moving,
                        reference,
                        with_covariate,
                    });
                }
            }
            pts
        }
        ExperimentId::Pathology => {
            let mut pts = Vec::new();
            for &factor in &cfg.pathology.factors {
                for regime in [Regime::HealthyOnly, Regime::HealthyAndPathological] {
                    pts.push(SweepPoint::Pathology { factor, regime });
                }
            }
            pts
        }
    }
}

/// Runs every (point, repetition) pair, in parallel, and assembles the report
/// in canonical order.
pub fn run(id: ExperimentId, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let pts = points(id, cfg);
    let tasks: Vec<(usize, usize)> = (0..pts.len())
        .flat_map(|i| (0..cfg.repetitions).map(move |k| (i, k)))
        .collect();
    let measurements = tasks
        .par_iter()
        .map(|&(i, k)| {
            let seed = repetition_seed(cfg.seed, id, i, k);
            Measurement {
                sweep_index: i,
                rep: k,
                seed,
                outcome: run_point(cfg, &pts[i], seed),
            }
        })
        .collect();
    Ok(ExperimentReport::new(id, pts, measurements))
}

/// One repetition at one point, replayable from its recorded seed.
pub fn run_point(cfg: &ExperimentConfig, point: &SweepPoint, seed: u64) -> Outcome {
    let seeds = TrialSeeds::from_seed(seed);
    let result = match *point {
        SweepPoint::Bias {
            additive,
            slope,
            noise,
            ..
        } => bias_trial(cfg, &seeds, additive, slope, noise),
        SweepPoint::SampleSize { n } => sample_size_trial(cfg, &seeds, n),
        SweepPoint::AgeRange { span, lo, strategy } => {
            age_range_trial(cfg, &seeds, lo, lo + span, strategy)
        }
        SweepPoint::Sex {
            moving,
            reference,
            with_covariate,
        } => sex_trial(cfg, &seeds, moving, reference, with_covariate),
        SweepPoint::Pathology { factor, regime } => pathology_trial(cfg, &seeds, factor, regime),
    };
    match result {
        Ok(m) => Outcome::Ok(m),
        Err(e @ CoreError::Sampling { .. }) => Outcome::Skipped(e.to_string()),
        Err(e) => Outcome::Failed(e.to_string()),
    }
}

fn bias_trial(
    cfg: &ExperimentConfig,
    seeds: &TrialSeeds,
    a: f64,
    s: f64,
    m: f64,
) -> CoreResult<Metrics> {
    let distortion = DistortionConfig::new(a, s, m, cfg.bias_sweep.gamma_scale);
    let st = setup(cfg, seeds, &distortion)?;
    let model = fit(&st.reference.table, &st.pool.table, &fit_schema(true))?;
    let report = goodness_of_fit(&model, &st.reference.table, &st.pool)?;
    let (bd_before, bd_after, bd_after_max) = bd_summary(&report);

    // Moving-to-reference variance ratio as estimated by the model, against
    // the generating ratio (δ·M)².
    let r = &model.model.sites[&model.reference_site];
    let mv = &model.model.sites[&model.moving_site];
    let errors: Vec<f64> = (0..st.bias.delta.len())
        .filter(|&v| !model.model.global.is_constant(v))
        .map(|v| {
            let truth = (st.bias.delta[v] * m).powi(2);
            let estimate = mv.delta2_star[v] / r.delta2_star[v];
            harmon_core::metrics::variance_estimation_error(truth, estimate)
        })
        .collect();
    Ok(Metrics {
        n_train: Some(st.pool.len() as f64),
        n_test: Some(0.0),
        bd_before: Some(bd_before),
        bd_after: Some(bd_after),
        bd_after_max: Some(bd_after_max),
        mad_train: report.mean_mad(),
        variance_error: Some(errors.iter().sum::<f64>() / errors.len() as f64),
        ..Default::default()
    })
}

fn sample_size_trial(cfg: &ExperimentConfig, seeds: &TrialSeeds, n: usize) -> CoreResult<Metrics> {
    if n < 2 {
        return Err(CoreError::Sampling {
            requested: n,
            available: 0,
            detail: "a site needs at least 2 training subjects".into(),
        });
    }
    let st = setup(cfg, seeds, &cfg.distortion)?;
    let pool = &st.pool;
    let train_idx = if n >= pool.len() {
        (0..pool.len()).collect()
    } else {
        sample_indices(&pool.table, n, n.is_multiple_of(2), None, seeds.training)?
    };
    let test_idx = complement(pool.len(), &train_idx);
    let train = pool.select(&train_idx);
    // With the whole pool used for training, the training rows serve as the
    // test set: this is the error floor.
    let test = if test_idx.is_empty() {
        train.clone()
    } else {
        pool.select(&test_idx)
    };
    let model = fit(&st.reference.table, &train.table, &fit_schema(true))?;
    let report = goodness_of_fit(&model, &st.reference.table, &test)?;
    let (bd_before, bd_after, bd_after_max) = bd_summary(&report);
    Ok(Metrics {
        n_train: Some(train.len() as f64),
        n_test: Some(test_idx.len() as f64),
        bd_before: Some(bd_before),
        bd_after: Some(bd_after),
        bd_after_max: Some(bd_after_max),
        mad_train: Some(harmonized_mad(&model, &train)?),
        mad_test: report.mean_mad(),
        ..Default::default()
    })
}

fn age_range_trial(
    cfg: &ExperimentConfig,
    seeds: &TrialSeeds,
    lo: f64,
    hi: f64,
    strategy: ReferenceStrategy,
) -> CoreResult<Metrics> {
    let st = setup(cfg, seeds, &cfg.distortion)?;
    let pool = &st.pool;
    let train_idx = sample_indices(
        &pool.table,
        cfg.age_range.n_train,
        true,
        Some((lo, hi)),
        seeds.training,
    )?;
    let test = pool.select(&complement(pool.len(), &train_idx));
    let train = pool.select(&train_idx);
    let reference = match strategy {
        ReferenceStrategy::Full => st.reference.table.clone(),
        ReferenceStrategy::AgeMatched => {
            let r = &st.reference.table;
            r.filter(|i, _| r.number(i, AGE).is_some_and(|a| a >= lo && a <= hi))
        }
    };
    if reference.len() < 2 {
        return Err(CoreError::Sampling {
            requested: 2,
            available: reference.len(),
            detail: "reference subjects inside the age window".into(),
        });
    }
    let model = fit(&reference, &train.table, &fit_schema(true))?;
    Ok(Metrics {
        n_train: Some(train.len() as f64),
        n_test: Some(test.len() as f64),
        mad_train: Some(harmonized_mad(&model, &train)?),
        mad_test: Some(harmonized_mad(&model, &test)?),
        ..Default::default()
    })
}

fn composition_sample(
    table: &harmon_core::data::CohortTable,
    n: usize,
    composition: Composition,
    seed: u64,
) -> CoreResult<Vec<usize>> {
    let level = match composition {
        Composition::Balanced => return sample_indices(table, n, true, None, seed),
        Composition::MaleOnly => "M",
        Composition::FemaleOnly => "F",
    };
    let eligible: Vec<usize> = (0..table.len())
        .filter(|&i| table.level(i, SEX) == Some(level))
        .collect();
    let picked = sample_indices(&table.select(&eligible), n, false, None, seed)?;
    Ok(picked.into_iter().map(|k| eligible[k]).collect())
}

fn sex_trial(
    cfg: &ExperimentConfig,
    seeds: &TrialSeeds,
    moving: Composition,
    reference: Composition,
    with_covariate: bool,
) -> CoreResult<Metrics> {
    let st = setup(cfg, seeds, &cfg.distortion)?;
    let sc = &cfg.sex_covariate;
    let ref_idx = composition_sample(
        &st.reference.table,
        sc.n_reference,
        reference,
        seeds.reference,
    )?;
    let train_idx = composition_sample(&st.pool.table, sc.n_train, moving, seeds.training)?;
    let train = st.pool.select(&train_idx);
    let test = st.pool.select(&complement(st.pool.len(), &train_idx));
    let model = fit(
        &st.reference.table.select(&ref_idx),
        &train.table,
        &fit_schema(with_covariate),
    )?;
    Ok(Metrics {
        n_train: Some(train.len() as f64),
        n_test: Some(test.len() as f64),
        mad_train: Some(harmonized_mad(&model, &train)?),
        mad_test: Some(harmonized_mad(&model, &test)?),
        ..Default::default()
    })
}

fn pathology_trial(
    cfg: &ExperimentConfig,
    seeds: &TrialSeeds,
    factor: f64,
    regime: Regime,
) -> CoreResult<Metrics> {
    let pc = &cfg.pathology;
    let distortion = DistortionConfig {
        gamma_scale: pc.gamma_scale,
        ..cfg.distortion.clone()
    };
    let st = setup(cfg, seeds, &distortion)?;
    let n = pc.n_healthy + pc.n_pathological;
    let train_idx = sample_indices(&st.pool.table, n, n.is_multiple_of(2), None, seeds.training)?;
    let test = st.pool.select(&complement(st.pool.len(), &train_idx));
    let spec = PathologySpec {
        fraction: pc.n_pathological as f64 / n as f64,
        additive_factor: factor,
        multiplicative_factor: factor,
        label: pc.label.clone(),
    };
    let train = mark_pathology(&st.pool.select(&train_idx), &spec, seeds.pathology)?;
    let options = PairwiseOptions {
        fit_filter: match regime {
            Regime::HealthyOnly => Some(RowFilter::new(DIAGNOSIS, HEALTHY)),
            Regime::HealthyAndPathological => None,
        },
        ..Default::default()
    };
    let schema: CovariateSchema = fit_schema(true);
    let model = fit_pairwise(&st.reference.table, &train.table, &schema, &options)?;

    let healthy_idx: Vec<usize> = (0..train.len())
        .filter(|&j| train.pathology[j].is_none())
        .collect();
    let patho_idx: Vec<usize> = (0..train.len())
        .filter(|&j| train.pathology[j].is_some())
        .collect();
    let report = goodness_of_fit(&model, &st.reference.table, &test)?;
    let (bd_before, bd_after, bd_after_max) = bd_summary(&report);

    Ok(Metrics {
        n_train: Some(model.summary.n_moving as f64),
        n_test: Some(test.len() as f64),
        bd_before: Some(bd_before),
        bd_after: Some(bd_after),
        bd_after_max: Some(bd_after_max),
        mad_train: Some(harmonized_mad(&model, &train.select(&healthy_idx))?),
        mad_test: report.mean_mad(),
        displacement_ratio: displacement_ratio(
            &model,
            &train.select(&patho_idx),
            &st.bias,
            cfg.distortion.noise,
        )?,
        ..Default::default()
    })
}

/// How much of the pathological group's shift survives harmonization.
///
/// The raw shift of a pathological subject is its value minus the value it
/// would have had as a healthy subject at the same site. In reference units
/// that shift is divided by the site's noise scale `δ·M`. The harmonized
/// shift is the harmonized value minus the subject's true healthy value. The
/// ratio of group means is averaged over features; `None` when the group
/// carries no shift.
fn displacement_ratio(
    model: &harmon_core::pairwise::PairwiseModel,
    patho: &harmon_core::synth::SyntheticCohort,
    bias: &harmon_core::synth::BiasSpec,
    noise_factor: f64,
) -> CoreResult<Option<f64>> {
    if patho.is_empty() {
        return Ok(None);
    }
    let healthy = patho.healthy_counterfactual()?;
    let truth = patho.truth()?;
    let harmonized = harmonize_moving(model, &patho.table)?;
    let n = patho.len() as f64;
    let mut ratios = Vec::new();
    for v in 0..patho.table.n_features() {
        let raw: f64 = (0..patho.len())
            .map(|j| patho.table.rows()[j].features[v] - healthy.rows()[j].features[v])
            .sum::<f64>()
            / n;
        if raw == 0.0 {
            continue;
        }
        let moved: f64 = (0..patho.len())
            .map(|j| harmonized.rows()[j].features[v] - truth.rows()[j].features[v])
            .sum::<f64>()
            / n;
        ratios.push(moved / (raw / (bias.delta[v] * noise_factor)));
    }
    Ok((!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64))
}
