//! The ComBAT estimation chain: pooled linear fit, standardization, per-site
//! moments, hyperpriors, empirical-Bayes shrinkage and the harmonizing map.

mod eb;
mod ols;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{build_design, check_same_features, CohortTable, CovariateSchema, DesignMatrix};
use crate::error::{Error, Result};

pub use eb::{
    eb_shrink, fit_hyperpriors, ls_estimate, EbOptions, Hyperpriors, Shrunken, SiteMoments,
};
pub use ols::fit_global;

pub const FORMAT_VERSION: u32 = 1;

/// Per-feature intercept, covariate slopes and pooled residual scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalFit {
    pub feature_names: Vec<String>,
    pub schema: CovariateSchema,
    /// Design column labels, intercept first.
    pub design_labels: Vec<String>,
    pub alpha: Vec<f64>,
    /// `beta[v]` follows the non-intercept design columns.
    pub beta: Vec<Vec<f64>>,
    /// Zero marks a constant feature, which is passed through unchanged.
    pub sigma: Vec<f64>,
    /// Least-squares site offsets, subject-weighted to sum to zero.
    pub site_offsets: BTreeMap<String, Vec<f64>>,
}

impl GlobalFit {
    pub fn n_features(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_constant(&self, v: usize) -> bool {
        self.sigma[v] == 0.0
    }

    /// `α_v + xᵀβ_v` for a design row (intercept included).
    pub fn predict(&self, design_row: &[f64], v: usize) -> f64 {
        self.alpha[v]
            + design_row[1..]
                .iter()
                .zip(&self.beta[v])
                .map(|(x, b)| x * b)
                .sum::<f64>()
    }

    fn design_for(&self, table: &CohortTable) -> Result<DesignMatrix> {
        check_same_features(&self.feature_names, table.feature_names())?;
        let design = build_design(table, &self.schema)?;
        if design.column_labels() != self.design_labels.as_slice() {
            return Err(Error::Schema(
                "table encodes to different design columns than the model".into(),
            ));
        }
        Ok(design)
    }
}

/// Standardized residuals, one row per subject.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedData {
    pub z: DMatrix<f64>,
    pub sites: Vec<String>,
}

impl StandardizedData {
    /// Columns of z restricted to rows of `site`, one vector per feature.
    pub fn site_columns(&self, site: &str) -> Vec<Vec<f64>> {
        let idx: Vec<usize> = (0..self.sites.len())
            .filter(|&i| self.sites[i] == site)
            .collect();
        (0..self.z.ncols())
            .map(|v| idx.iter().map(|&i| self.z[(i, v)]).collect())
            .collect()
    }
}

/// `z = (y − α − xᵀβ) / σ`; constant features get `z = 0`.
pub fn standardize(
    table: &CohortTable,
    design: &DesignMatrix,
    global: &GlobalFit,
) -> Result<StandardizedData> {
    check_same_features(&global.feature_names, table.feature_names())?;
    if design.column_labels() != global.design_labels.as_slice() || design.nrows() != table.len() {
        return Err(Error::Schema(
            "design does not match the fitted model".into(),
        ));
    }
    let v_count = global.n_features();
    let mut z = DMatrix::zeros(table.len(), v_count);
    for (i, row) in table.rows().iter().enumerate() {
        let x = design.row(i);
        for v in 0..v_count {
            if !global.is_constant(v) {
                z[(i, v)] = (row.features[v] - global.predict(&x, v)) / global.sigma[v];
            }
        }
    }
    Ok(StandardizedData {
        z,
        sites: table.rows().iter().map(|r| r.site.clone()).collect(),
    })
}

/// Per-site empirical moments of the standardized data.
pub fn estimate_site_moments(z: &StandardizedData) -> Result<BTreeMap<String, SiteMoments>> {
    let mut sites: Vec<&String> = z.sites.iter().collect();
    sites.sort();
    sites.dedup();
    sites
        .into_iter()
        .map(|site| {
            let cols = z.site_columns(site);
            let m = SiteMoments::from_columns(&cols).map_err(|e| match e {
                Error::SiteTooSmall { n, .. } => Error::SiteTooSmall {
                    site: site.clone(),
                    n,
                },
                other => other,
            })?;
            Ok((site.clone(), m))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    EmpiricalBayes,
    /// Unshrunken moments, used when the hyperpriors are degenerate.
    LocationScale,
}

/// Batch parameters of one site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteBatch {
    pub site_id: String,
    pub n_subjects: usize,
    pub estimator: Estimator,
    pub iterations: usize,
    pub converged: bool,
    pub priors: Hyperpriors,
    pub gamma_hat: Vec<f64>,
    pub delta2_hat: Vec<f64>,
    pub gamma_star: Vec<f64>,
    pub delta2_star: Vec<f64>,
}

impl SiteBatch {
    /// Estimates the batch parameters of `site` from its moments. Constant
    /// features are left out of the hyperprior moments and get an identity batch.
    pub fn estimate(
        site: &str,
        moments: &SiteMoments,
        global: &GlobalFit,
        options: &EbOptions,
    ) -> Result<Self> {
        let active: Vec<usize> = (0..global.n_features())
            .filter(|&v| !global.is_constant(v))
            .collect();
        let sub = SiteMoments {
            n_subjects: moments.n_subjects,
            gamma_hat: active.iter().map(|&v| moments.gamma_hat[v]).collect(),
            delta2_hat: active.iter().map(|&v| moments.delta2_hat[v]).collect(),
        };
        let priors = fit_hyperpriors(&sub.gamma_hat, &sub.delta2_hat);
        let (estimator, shrunk) = if priors.is_degenerate() {
            (Estimator::LocationScale, ls_estimate(&sub))
        } else {
            let s = eb_shrink(&sub, &priors, options).map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(format!("site `{site}`: {m}")),
                other => other,
            })?;
            (Estimator::EmpiricalBayes, s)
        };
        let v_count = global.n_features();
        let mut gamma_star = vec![0.0; v_count];
        let mut delta2_star = vec![1.0; v_count];
        for (k, &v) in active.iter().enumerate() {
            gamma_star[v] = shrunk.gamma_star[k];
            delta2_star[v] = shrunk.delta2_star[k];
        }
        Ok(Self {
            site_id: site.to_string(),
            n_subjects: moments.n_subjects,
            estimator,
            iterations: shrunk.iterations,
            converged: shrunk.converged,
            priors,
            gamma_hat: moments.gamma_hat.clone(),
            delta2_hat: moments.delta2_hat.clone(),
            gamma_star,
            delta2_star,
        })
    }

    /// Features this batch cannot rescale (zero shrunken variance).
    fn passes_through(&self, v: usize) -> bool {
        self.delta2_star[v] <= 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Mode {
    Classic,
    Pairwise { reference: String },
}

/// A fitted model: everything needed to harmonize new rows from fitted sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonizationModel {
    pub format_version: u32,
    pub mode: Mode,
    pub global: GlobalFit,
    pub sites: BTreeMap<String, SiteBatch>,
}

impl HarmonizationModel {
    pub fn site(&self, site: &str) -> Result<&SiteBatch> {
        self.sites.get(site).ok_or_else(|| Error::UnknownSite {
            site: site.to_string(),
            known: self.sites.keys().cloned().collect(),
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::ModelFormat(e.to_string()))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let model: Self = toml::from_str(text).map_err(|e| Error::ModelFormat(e.to_string()))?;
        if model.format_version != FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                model.format_version
            )));
        }
        model.check_consistency()?;
        Ok(model)
    }

    fn check_consistency(&self) -> Result<()> {
        let v = self.global.feature_names.len();
        let p = self.global.design_labels.len().saturating_sub(1);
        let global_ok = self.global.alpha.len() == v
            && self.global.sigma.len() == v
            && self.global.beta.len() == v
            && self.global.beta.iter().all(|b| b.len() == p)
            && self.global.design_labels.len() == self.global.schema.design_width();
        let sites_ok = self.sites.iter().all(|(k, s)| {
            *k == s.site_id
                && [&s.gamma_hat, &s.delta2_hat, &s.gamma_star, &s.delta2_star]
                    .iter()
                    .all(|x| x.len() == v)
        });
        if !global_ok || !sites_ok {
            return Err(Error::ModelFormat(
                "array lengths disagree with the feature list".into(),
            ));
        }
        if let Mode::Pairwise { reference } = &self.mode {
            self.site(reference)?;
        }
        Ok(())
    }
}

/// Fits the full chain on all sites of `table` with covariates from `schema`.
pub fn fit_combat(
    table: &CohortTable,
    schema: &CovariateSchema,
    options: &EbOptions,
) -> Result<HarmonizationModel> {
    let design = build_design(table, schema)?;
    let global = fit_global(table, &design)?;
    let z = standardize(table, &design, &global)?;
    let sites = estimate_site_moments(&z)?
        .iter()
        .map(|(site, m)| {
            Ok((
                site.clone(),
                SiteBatch::estimate(site, m, &global, options)?,
            ))
        })
        .collect::<Result<_>>()?;
    Ok(HarmonizationModel {
        format_version: FORMAT_VERSION,
        mode: Mode::Classic,
        global,
        sites,
    })
}

/// Maps every row onto the common standardized space:
/// `y* = (σ/δ*)(z − γ*) + α + xᵀβ`. Constant features pass through.
pub fn apply_combat(table: &CohortTable, model: &HarmonizationModel) -> Result<CohortTable> {
    map_rows(table, model, None)
}

/// Shared row map. With `target`, the output is re-expressed in the target
/// site's batch: `y* = σ((δ*_t/δ*_s)(z − γ*_s) + γ*_t) + α + xᵀβ`.
pub(crate) fn map_rows(
    table: &CohortTable,
    model: &HarmonizationModel,
    target: Option<&SiteBatch>,
) -> Result<CohortTable> {
    let global = &model.global;
    let design = global.design_for(table)?;
    let mut values = Vec::with_capacity(table.len());
    for (i, row) in table.rows().iter().enumerate() {
        let batch = model.site(&row.site)?;
        let x = design.row(i);
        let out = (0..global.n_features())
            .map(|v| {
                let y = row.features[v];
                if global.is_constant(v) || batch.passes_through(v) {
                    return y;
                }
                let fitted = global.predict(&x, v);
                let sigma = global.sigma[v];
                let z = (y - fitted) / sigma;
                let centered = (z - batch.gamma_star[v]) / batch.delta2_star[v].sqrt();
                match target {
                    None => sigma * centered + fitted,
                    Some(t) => {
                        sigma * (t.delta2_star[v].sqrt() * centered + t.gamma_star[v]) + fitted
                    }
                }
            })
            .collect();
        values.push(out);
    }
    table.with_features(values)
}
