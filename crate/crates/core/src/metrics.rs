//! Goodness of fit between harmonized populations: Bhattacharyya distance on
//! covariate-free residuals, paired mean absolute difference, and the squared
//! error of a variance estimate.

use crate::combat::{fit_global, HarmonizationModel};
use crate::data::{build_design, check_same_features, CohortTable, CovariateSchema};
use crate::error::{Error, Result};
use crate::pairwise::{harmonize_moving, PairwiseModel};

/// A covariate plane `a_v + xᵀb_v` used to strip covariate effects.
#[derive(Debug, Clone, PartialEq)]
pub struct Trend {
    schema: CovariateSchema,
    design_labels: Vec<String>,
    feature_names: Vec<String>,
    intercept: Vec<f64>,
    slopes: Vec<Vec<f64>>,
}

impl Trend {
    /// The fitted model's plane shifted to the anchor site: `α̂ + σ̂γ*_R + xᵀβ̂`.
    pub fn from_model(model: &HarmonizationModel, anchor_site: &str) -> Result<Self> {
        let batch = model.site(anchor_site)?;
        let g = &model.global;
        Ok(Self {
            schema: g.schema.clone(),
            design_labels: g.design_labels.clone(),
            feature_names: g.feature_names.clone(),
            intercept: (0..g.n_features())
                .map(|v| g.alpha[v] + g.sigma[v] * batch.gamma_star[v])
                .collect(),
            slopes: g.beta.clone(),
        })
    }

    /// Least-squares plane of a single population on its own.
    pub fn fit(population: &CohortTable, schema: &CovariateSchema) -> Result<Self> {
        let design = build_design(population, schema)?;
        let fit = fit_global(population, &design)?;
        Ok(Self {
            schema: schema.clone(),
            design_labels: fit.design_labels,
            feature_names: fit.feature_names,
            intercept: fit.alpha,
            slopes: fit.beta,
        })
    }
}

/// Per-feature residuals of one population against a trend.
#[derive(Debug, Clone, PartialEq)]
pub struct RectifiedSample {
    pub sites: Vec<String>,
    /// `values[v]` holds one residual per row.
    pub values: Vec<Vec<f64>>,
}

pub fn rectify(rows: &CohortTable, trend: &Trend) -> Result<RectifiedSample> {
    check_same_features(&trend.feature_names, rows.feature_names())?;
    let design = build_design(rows, &trend.schema)?;
    if design.column_labels() != trend.design_labels.as_slice() {
        return Err(Error::Schema(
            "rows encode to different design columns than the trend".into(),
        ));
    }
    let mut values = vec![Vec::with_capacity(rows.len()); trend.feature_names.len()];
    for (i, row) in rows.rows().iter().enumerate() {
        let x = design.row(i);
        for (v, out) in values.iter_mut().enumerate() {
            let fitted = trend.intercept[v]
                + x[1..]
                    .iter()
                    .zip(&trend.slopes[v])
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            out.push(row.features[v] - fitted);
        }
    }
    Ok(RectifiedSample {
        sites: rows.rows().iter().map(|r| r.site.clone()).collect(),
        values,
    })
}

fn moments(x: &[f64]) -> Result<(f64, f64)> {
    if x.len() < 2 {
        return Err(Error::Argument(format!(
            "{} value(s); at least 2 are needed",
            x.len()
        )));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, var))
}

/// Bhattacharyya distance between Gaussians fitted to the two samples:
/// `¼ (μa − μb)² / (σa² + σb²) + ½ ln((σa² + σb²) / (2 σa σb))`.
pub fn bhattacharyya(a: &[f64], b: &[f64]) -> Result<f64> {
    let (ma, va) = moments(a)?;
    let (mb, vb) = moments(b)?;
    if va <= 0.0 || vb <= 0.0 {
        return Err(Error::Numerical(
            "zero-variance sample in Bhattacharyya distance".into(),
        ));
    }
    let sum = va + vb;
    let d = 0.25 * (ma - mb) * (ma - mb) / sum + 0.5 * (sum / (2.0 * (va * vb).sqrt())).ln();
    // The log term is ≥ 0 analytically; clamp rounding noise.
    Ok(d.max(0.0))
}

/// Mean absolute difference of paired values.
pub fn mad(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Argument(format!(
            "cannot pair {} values with {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Argument("no values to compare".into()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// Per-feature MAD between two tables holding the same subjects in the same order.
pub fn table_mad(a: &CohortTable, b: &CohortTable) -> Result<Vec<f64>> {
    check_same_features(a.feature_names(), b.feature_names())?;
    if a.len() != b.len()
        || a.rows()
            .iter()
            .zip(b.rows())
            .any(|(x, y)| x.subject_id != y.subject_id)
    {
        return Err(Error::Argument(
            "tables do not list the same subjects in the same order".into(),
        ));
    }
    (0..a.n_features())
        .map(|v| mad(&a.feature_column(v), &b.feature_column(v)))
        .collect()
}

pub fn variance_estimation_error(true_delta2: f64, estimated_delta2: f64) -> f64 {
    (estimated_delta2 - true_delta2).powi(2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFit {
    pub feature: String,
    pub bd_before: f64,
    pub bd_after: f64,
    pub mad: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub features: Vec<FeatureFit>,
}

impl FitReport {
    fn mean(&self, f: impl Fn(&FeatureFit) -> Option<f64>) -> Option<f64> {
        let vals: Vec<f64> = self.features.iter().filter_map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn mean_bd_before(&self) -> f64 {
        self.mean(|f| Some(f.bd_before)).unwrap_or(0.0)
    }

    pub fn mean_bd_after(&self) -> f64 {
        self.mean(|f| Some(f.bd_after)).unwrap_or(0.0)
    }

    pub fn mean_mad(&self) -> Option<f64> {
        self.mean(|f| f.mad)
    }
}

/// Distances between the reference population and the moving population,
/// before and after harmonization. Both are measured as residuals against the
/// reference population's own covariate trend. With `truth`, the harmonized
/// moving rows are also compared subject by subject to their true values.
pub fn evaluate_pairwise(
    model: &PairwiseModel,
    reference: &CohortTable,
    moving: &CohortTable,
    truth: Option<&CohortTable>,
) -> Result<FitReport> {
    let trend = Trend::fit(reference, &model.model.global.schema)?;
    let harmonized = harmonize_moving(model, moving)?;
    let r = rectify(reference, &trend)?;
    let before = rectify(moving, &trend)?;
    let after = rectify(&harmonized, &trend)?;
    let mads = truth.map(|t| table_mad(&harmonized, t)).transpose()?;
    let features = moving
        .feature_names()
        .iter()
        .enumerate()
        .map(|(v, name)| {
            Ok(FeatureFit {
                feature: name.clone(),
                bd_before: bhattacharyya(&r.values[v], &before.values[v])?,
                bd_after: bhattacharyya(&r.values[v], &after.values[v])?,
                mad: mads.as_ref().map(|m| m[v]),
            })
        })
        .collect::<Result<_>>()?;
    Ok(FitReport { features })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn bd_hand_values() {
        // Two-point samples {m − 1/√2·…}: build samples with exact mean/variance.
        let s = |m: f64, sd: f64| vec![m - sd / 2f64.sqrt(), m + sd / 2f64.sqrt()];
        assert_relative_eq!(
            bhattacharyya(&s(0.0, 1.0), &s(1.0, 1.0)).unwrap(),
            0.125,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            bhattacharyya(&s(0.0, 1.0), &s(0.0, 2.0)).unwrap(),
            0.5 * (5.0f64 / 4.0).ln(),
            epsilon = 1e-12
        );
        let a = [0.1, 0.5, -0.3, 0.9];
        assert_eq!(bhattacharyya(&a, &a).unwrap(), 0.0);
        assert!(bhattacharyya(&[1.0, 1.0], &a).is_err());
        assert!(bhattacharyya(&[1.0], &a).is_err());
    }

    #[test]
    fn mad_hand_values() {
        assert_eq!(mad(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 1.5);
        assert_eq!(mad(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(mad(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn variance_error() {
        assert_eq!(variance_estimation_error(1.5, 1.5), 0.0);
        assert_eq!(variance_estimation_error(1.0, 3.0), 4.0);
    }

    proptest! {
        #[test]
        fn bd_symmetric_nonnegative_affine_invariant(
            a in prop::collection::vec(-10.0f64..10.0, 3..30),
            b in prop::collection::vec(-10.0f64..10.0, 3..30),
            shift in -5.0f64..5.0,
            scale in 0.1f64..10.0,
        ) {
            let (Ok(d), Ok(e)) = (bhattacharyya(&a, &b), bhattacharyya(&b, &a)) else {
                return Ok(());
            };
            prop_assert!(d >= 0.0);
            prop_assert_eq!(d, e);
            let map = |x: &[f64]| x.iter().map(|v| shift + scale * v).collect::<Vec<_>>();
            let f = bhattacharyya(&map(&a), &map(&b)).unwrap();
            prop_assert!((f - d).abs() <= 1e-9 * (1.0 + d));
        }

        #[test]
        fn mad_translation_and_symmetry(a in prop::collection::vec(-10.0f64..10.0, 1..30), c in -5.0f64..5.0) {
            let b: Vec<f64> = a.iter().map(|x| x + c).collect();
            prop_assert!((mad(&a, &b).unwrap() - c.abs()).abs() < 1e-12);
            prop_assert_eq!(mad(&a, &b).unwrap(), mad(&b, &a).unwrap());
        }
    }
}
