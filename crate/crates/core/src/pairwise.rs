//! Reference-anchored harmonization: a moving site is mapped onto the batch
//! parameters of a fixed reference site, one pair at a time.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::combat::{fit_combat, map_rows, EbOptions, HarmonizationModel, Mode};
use crate::data::{check_same_features, CohortTable, CovariateSchema};
use crate::error::{Error, Result};

/// Keep only rows whose label column equals a value, e.g. `diagnosis=HC`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowFilter {
    pub label: String,
    pub value: String,
}

impl RowFilter {
    pub fn new(label: &str, value: &str) -> Self {
        Self {
            label: label.to_string(),
            value: value.to_string(),
        }
    }

    /// Parses `label=value`.
    pub fn parse(text: &str) -> Result<Self> {
        match text.split_once('=') {
            Some((l, v)) if !l.is_empty() && !v.is_empty() => Ok(Self::new(l, v)),
            _ => Err(Error::Argument(format!(
                "filter `{text}` is not of the form label=value"
            ))),
        }
    }

    pub fn apply(&self, table: &CohortTable) -> Result<CohortTable> {
        if table.schema().label_position(&self.label).is_none() {
            return Err(Error::Argument(format!(
                "no label column `{}` to filter on",
                self.label
            )));
        }
        Ok(table.filter(|i, _| table.label(i, &self.label) == Some(self.value.as_str())))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairwiseOptions {
    pub eb: EbOptions,
    /// Applied to both tables before fitting; harmonization is still applied
    /// to every row afterwards.
    pub fit_filter: Option<RowFilter>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub n_reference: usize,
    pub n_moving: usize,
    pub reference_converged: bool,
    pub moving_converged: bool,
    /// `[min, max]` of each continuous covariate over the fitted rows.
    pub covariate_ranges: BTreeMap<String, [f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseModel {
    pub reference_site: String,
    pub moving_site: String,
    pub summary: FitSummary,
    pub model: HarmonizationModel,
}

fn single_site(table: &CohortTable, role: &str) -> Result<String> {
    let sites = table.sites();
    match sites.as_slice() {
        [site] => Ok(site.clone()),
        [] => Err(Error::Argument(format!("the {role} table is empty"))),
        _ => Err(Error::Argument(format!(
            "the {role} table mixes sites: {}",
            sites.join(", ")
        ))),
    }
}

/// Fits the full estimation chain on `reference ∪ moving`. Only the rows
/// passed in are read.
pub fn fit_pairwise(
    reference: &CohortTable,
    moving: &CohortTable,
    schema: &CovariateSchema,
    options: &PairwiseOptions,
) -> Result<PairwiseModel> {
    check_same_features(reference.feature_names(), moving.feature_names())?;
    let (reference, moving) = match &options.fit_filter {
        Some(f) => (f.apply(reference)?, f.apply(moving)?),
        None => (reference.clone(), moving.clone()),
    };
    let reference_site = single_site(&reference, "reference")?;
    let moving_site = single_site(&moving, "moving")?;
    if reference_site == moving_site {
        return Err(Error::Argument(format!(
            "reference and moving rows share the site label `{reference_site}`"
        )));
    }
    let union = reference.concat(&moving)?;
    let mut model = fit_combat(&union, schema, &options.eb)?;
    model.mode = Mode::Pairwise {
        reference: reference_site.clone(),
    };

    let mut covariate_ranges = BTreeMap::new();
    for cov in schema.covariates.iter().filter(|c| c.is_continuous()) {
        let values = (0..union.len()).filter_map(|i| union.number(i, &cov.name));
        let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
            (lo.min(x), hi.max(x))
        });
        covariate_ranges.insert(cov.name.clone(), [lo, hi]);
    }
    let summary = FitSummary {
        n_reference: reference.len(),
        n_moving: moving.len(),
        reference_converged: model.sites[&reference_site].converged,
        moving_converged: model.sites[&moving_site].converged,
        covariate_ranges,
    };
    Ok(PairwiseModel {
        reference_site,
        moving_site,
        summary,
        model,
    })
}

/// `y* = σ((δ*_R/δ*_M)(z − γ*_M) + γ*_R) + α + xᵀβ`, with each row's own
/// covariates. Rows labelled with the reference site are returned unchanged.
pub fn harmonize_moving(model: &PairwiseModel, rows: &CohortTable) -> Result<CohortTable> {
    let reference = model.model.site(&model.reference_site)?;
    let mapped = map_rows(rows, &model.model, Some(reference))?;
    let values = rows
        .rows()
        .iter()
        .zip(mapped.rows())
        .map(|(raw, out)| {
            if raw.site == model.reference_site {
                raw.features.clone()
            } else {
                out.features.clone()
            }
        })
        .collect();
    rows.with_features(values)
}

impl PairwiseModel {
    fn validate(&self) -> Result<()> {
        if self.reference_site == self.moving_site {
            return Err(Error::ModelFormat(
                "reference and moving sites coincide".into(),
            ));
        }
        self.model.site(&self.reference_site)?;
        self.model.site(&self.moving_site)?;
        match &self.model.mode {
            Mode::Pairwise { reference } if *reference == self.reference_site => Ok(()),
            _ => Err(Error::ModelFormat(
                "model is not anchored on its reference site".into(),
            )),
        }
    }
}

pub fn save_model<W: Write>(model: &PairwiseModel, mut sink: W) -> Result<()> {
    let text = toml::to_string(model).map_err(|e| Error::ModelFormat(e.to_string()))?;
    sink.write_all(text.as_bytes())?;
    Ok(())
}

pub fn load_model<R: Read>(mut source: R) -> Result<PairwiseModel> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let model: PairwiseModel =
        toml::from_str(&text).map_err(|e| Error::ModelFormat(e.to_string()))?;
    // Re-check version and array shapes through the embedded model's loader.
    let inner = toml::to_string(&model.model).map_err(|e| Error::ModelFormat(e.to_string()))?;
    HarmonizationModel::from_toml_str(&inner)?;
    model.validate()?;
    Ok(model)
}
