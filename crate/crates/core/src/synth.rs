//! Synthetic cohorts from the linear site model, with controlled additive,
//! slope and noise distortions and pathological subgroups.
//!
//! A generated cohort keeps each subject's noise draw and covariate effect, so
//! a distorted copy holds the same subjects with transformed values:
//!
//! ```text
//! y = α + γ·A + xᵀβ·S + δ·ε·M
//! ```

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{csv_io, format_f64, CohortTable, CovariateSchema, CovariateValue, Subject, SEX};
use crate::error::{Error, Result};

pub const DIAGNOSIS: &str = "diagnosis";
pub const HEALTHY: &str = "HC";

/// Parameters of one healthy population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub site_id: String,
    pub n_subjects: usize,
    /// Ages are uniform on `[lo, hi]` years.
    pub age_range: [f64; 2],
    /// Fraction of female subjects; the count is rounded and exact.
    pub female_fraction: f64,
    pub seed: u64,
    pub feature_names: Vec<String>,
    pub alpha: Vec<f64>,
    /// Feature units per year.
    pub beta_age: Vec<f64>,
    /// Female minus male.
    pub beta_sex: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl PopulationSpec {
    /// Mean-diffusivity-like features: 2.5e-3 at birth, +2e-6 per year,
    /// +1e-5 for females, noise 5e-5. Every feature shares these values.
    pub fn md_like(site_id: &str, n_subjects: usize, n_features: usize, seed: u64) -> Self {
        let width = n_features.to_string().len().max(2);
        Self {
            site_id: site_id.to_string(),
            n_subjects,
            age_range: [18.0, 87.0],
            female_fraction: 217.0 / 441.0,
            seed,
            feature_names: (0..n_features)
                .map(|v| format!("feature_{:0width$}", v + 1))
                .collect(),
            alpha: vec![2.5e-3; n_features],
            beta_age: vec![2.0e-6; n_features],
            beta_sex: vec![1.0e-5; n_features],
            sigma: vec![5.0e-5; n_features],
        }
    }

    /// 441 subjects aged 18 to 87, 224 male and 217 female.
    pub fn camcan_like(site_id: &str, n_features: usize, seed: u64) -> Self {
        Self::md_like(site_id, 441, n_features, seed)
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.feature_names.len();
        if self.n_subjects == 0 || v == 0 {
            return Err(Error::Argument(
                "a population needs subjects and features".into(),
            ));
        }
        if !(self.age_range[0] < self.age_range[1]) {
            return Err(Error::Argument("age range must have lo < hi".into()));
        }
        if !(0.0..=1.0).contains(&self.female_fraction) {
            return Err(Error::Argument("female fraction must lie in [0, 1]".into()));
        }
        if [&self.alpha, &self.beta_age, &self.beta_sex, &self.sigma]
            .iter()
            .any(|x| x.len() != v)
        {
            return Err(Error::Argument(
                "parameter vectors must have one entry per feature".into(),
            ));
        }
        if self.sigma.iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::Argument("noise scales must be non-negative".into()));
        }
        Ok(())
    }

    pub fn female_count(&self) -> usize {
        (self.female_fraction * self.n_subjects as f64).round() as usize
    }
}

/// Site distortion: additive (`A` on `γ`), slope (`S` on `xᵀβ`) and noise
/// (`M` on `δ·ε`) factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSpec {
    pub additive_factor: f64,
    pub slope_factor: f64,
    pub noise_factor: f64,
    pub gamma: Vec<f64>,
    pub delta: Vec<f64>,
}

impl BiasSpec {
    /// `γ = gamma_scale·α`, `δ = 1`.
    pub fn for_population(
        population: &PopulationSpec,
        a: f64,
        s: f64,
        m: f64,
        gamma_scale: f64,
    ) -> Self {
        Self {
            additive_factor: a,
            slope_factor: s,
            noise_factor: m,
            gamma: population.alpha.iter().map(|x| gamma_scale * x).collect(),
            delta: vec![1.0; population.n_features()],
        }
    }

    pub fn identity(n_features: usize) -> Self {
        Self {
            additive_factor: 1.0,
            slope_factor: 1.0,
            noise_factor: 1.0,
            gamma: vec![0.0; n_features],
            delta: vec![1.0; n_features],
        }
    }

    fn validate(&self, n_features: usize) -> Result<()> {
        if self.gamma.len() != n_features || self.delta.len() != n_features {
            return Err(Error::Argument(
                "bias vectors must have one entry per feature".into(),
            ));
        }
        if self.delta.iter().any(|&d| !(d > 0.0)) || !(self.noise_factor >= 0.0) {
            return Err(Error::Argument("bias needs δ > 0 and M ≥ 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathologySpec {
    pub fraction: f64,
    pub additive_factor: f64,
    pub multiplicative_factor: f64,
    #[serde(default = "default_label")]
    pub label: String,
}

fn default_label() -> String {
    "patho".into()
}

/// A cohort plus the per-subject quantities it was generated from.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCohort {
    pub table: CohortTable,
    pub population: PopulationSpec,
    /// `noise[j][v]`, in feature units.
    pub noise: Vec<Vec<f64>>,
    /// `covariate_effect[j][v] = xᵀβ`.
    pub covariate_effect: Vec<Vec<f64>>,
    pub bias: Option<BiasSpec>,
    /// Per row: `(A_p, M_p)` when the row is pathological.
    pub pathology: Vec<Option<(f64, f64)>>,
}

impl SyntheticCohort {
    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// Rows at `indices`, latent records kept aligned.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            table: self.table.select(indices),
            population: self.population.clone(),
            noise: indices.iter().map(|&i| self.noise[i].clone()).collect(),
            covariate_effect: indices
                .iter()
                .map(|&i| self.covariate_effect[i].clone())
                .collect(),
            bias: self.bias.clone(),
            pathology: indices.iter().map(|&i| self.pathology[i]).collect(),
        }
    }

    fn value(&self, j: usize, v: usize, bias: &BiasSpec, patho: Option<(f64, f64)>) -> f64 {
        let (ap, mp) = patho.unwrap_or((1.0, 1.0));
        self.population.alpha[v]
            + bias.gamma[v] * bias.additive_factor * ap
            + self.covariate_effect[j][v] * bias.slope_factor
            + bias.delta[v] * self.noise[j][v] * bias.noise_factor * mp
    }

    fn rebuild(
        &self,
        site: &str,
        bias: &BiasSpec,
        pathology: &[Option<(f64, f64)>],
    ) -> Result<CohortTable> {
        let rows = self
            .table
            .rows()
            .iter()
            .enumerate()
            .map(|(j, r)| Subject {
                site: site.to_string(),
                features: (0..self.population.n_features())
                    .map(|v| self.value(j, v, bias, pathology[j]))
                    .collect(),
                ..r.clone()
            })
            .collect();
        CohortTable::new(
            self.table.schema().clone(),
            self.table.feature_names().to_vec(),
            rows,
        )
    }

    /// The undistorted values `α + xᵀβ + ε` of these subjects, labelled with
    /// the population's site.
    pub fn truth(&self) -> Result<CohortTable> {
        let none = vec![None; self.len()];
        self.rebuild(
            &self.population.site_id,
            &BiasSpec::identity(self.population.n_features()),
            &none,
        )
    }

    /// Current site distortion applied with every pathological factor removed.
    pub fn healthy_counterfactual(&self) -> Result<CohortTable> {
        let bias = self.current_bias();
        let none = vec![None; self.len()];
        let site = self
            .table
            .rows()
            .first()
            .map_or(self.population.site_id.clone(), |r| r.site.clone());
        self.rebuild(&site, &bias, &none)
    }

    fn current_bias(&self) -> BiasSpec {
        self.bias
            .clone()
            .unwrap_or_else(|| BiasSpec::identity(self.population.n_features()))
    }

    /// Latent records as CSV: `subject_id,site,<feature>_xbeta...,<feature>_noise...`.
    pub fn write_latent<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec!["subject_id".to_string(), "site".to_string()];
        for suffix in ["xbeta", "noise"] {
            header.extend(
                self.table
                    .feature_names()
                    .iter()
                    .map(|f| format!("{f}_{suffix}")),
            );
        }
        w.write_record(&header).map_err(csv_io)?;
        for (j, row) in self.table.rows().iter().enumerate() {
            let mut rec = vec![row.subject_id.clone(), row.site.clone()];
            rec.extend(self.covariate_effect[j].iter().map(|&x| format_f64(x)));
            rec.extend(self.noise[j].iter().map(|&x| format_f64(x)));
            w.write_record(&rec).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Draws a healthy cohort: uniform ages, an exact female count at random
/// positions, Gaussian noise with per-feature scale.
pub fn generate_cohort(spec: &PopulationSpec) -> Result<SyntheticCohort> {
    spec.validate()?;
    let schema = CovariateSchema::age_sex();
    let n = spec.n_subjects;
    let v_count = spec.n_features();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let [lo, hi] = spec.age_range;
    let ages: Vec<f64> = (0..n).map(|_| rng.random_range(lo..=hi)).collect();
    let n_female = spec.female_count();
    let mut female: Vec<bool> = (0..n).map(|j| j < n_female).collect();
    female.shuffle(&mut rng);

    let female_level = schema
        .covariate(SEX)
        .and_then(|c| c.levels())
        .and_then(|l| l.iter().position(|x| x == "F"))
        .expect("age/sex schema declares F");
    let mut noise = Vec::with_capacity(n);
    let mut covariate_effect = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    for j in 0..n {
        let sex = f64::from(u8::from(female[j]));
        let eps: Vec<f64> = (0..v_count)
            .map(|v| spec.sigma[v] * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let xb: Vec<f64> = (0..v_count)
            .map(|v| ages[j] * spec.beta_age[v] + sex * spec.beta_sex[v])
            .collect();
        let features = (0..v_count)
            .map(|v| spec.alpha[v] + xb[v] + eps[v])
            .collect();
        rows.push(Subject {
            subject_id: format!("sub-{:04}", j + 1),
            site: spec.site_id.clone(),
            covariates: vec![
                CovariateValue::Number(ages[j]),
                CovariateValue::Level(if female[j] {
                    female_level
                } else {
                    1 - female_level
                }),
            ],
            labels: vec![HEALTHY.to_string()],
            features,
        });
        noise.push(eps);
        covariate_effect.push(xb);
    }
    let table = CohortTable::new(schema, spec.feature_names.clone(), rows)?;
    Ok(SyntheticCohort {
        table,
        population: spec.clone(),
        noise,
        covariate_effect,
        bias: None,
        pathology: vec![None; n],
    })
}

/// Re-expresses the same subjects as measured at a distorted site `site_id`.
pub fn inject_bias(
    cohort: &SyntheticCohort,
    bias: &BiasSpec,
    site_id: &str,
) -> Result<SyntheticCohort> {
    bias.validate(cohort.population.n_features())?;
    let table = cohort.rebuild(site_id, bias, &cohort.pathology)?;
    Ok(SyntheticCohort {
        table,
        bias: Some(bias.clone()),
        ..cohort.clone()
    })
}

/// Marks a random `fraction` of rows as pathological: their values become
/// `α + γ·A·A_p + xᵀβ·S + δ·ε·M·M_p` under the cohort's site distortion, and
/// their diagnosis label is set.
pub fn mark_pathology(
    cohort: &SyntheticCohort,
    spec: &PathologySpec,
    seed: u64,
) -> Result<SyntheticCohort> {
    if !(0.0..=1.0).contains(&spec.fraction) || !(spec.multiplicative_factor >= 0.0) {
        return Err(Error::Argument(
            "pathology needs a fraction in [0, 1] and M_p ≥ 0".into(),
        ));
    }
    let k = (spec.fraction * cohort.len() as f64).round() as usize;
    if k == 0 {
        return Ok(cohort.clone());
    }
    let label_pos = cohort
        .table
        .schema()
        .label_position(DIAGNOSIS)
        .ok_or_else(|| Error::Schema("cohort has no diagnosis label".into()))?;
    let mut order: Vec<usize> = (0..cohort.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut pathology = cohort.pathology.clone();
    for &j in &order[..k] {
        pathology[j] = Some((spec.additive_factor, spec.multiplicative_factor));
    }
    let site = cohort.table.rows()[0].site.clone();
    let table = cohort.rebuild(&site, &cohort.current_bias(), &pathology)?;
    let rows = table
        .rows()
        .iter()
        .zip(&pathology)
        .map(|(r, p)| {
            let mut r = r.clone();
            if p.is_some() {
                r.labels[label_pos] = spec.label.clone();
            }
            r
        })
        .collect();
    Ok(SyntheticCohort {
        table: CohortTable::new(table.schema().clone(), table.feature_names().to_vec(), rows)?,
        pathology,
        ..cohort.clone()
    })
}

/// Cohort recipe read from a structured-text file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub population: PopulationConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<BiasConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pathology: Option<PathologyConfig>,
}

/// Either fully explicit parameters or the mean-diffusivity-like preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PopulationConfig {
    Explicit(PopulationSpec),
    Preset(MdLikePreset),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdLikePreset {
    pub site_id: String,
    pub n_subjects: usize,
    #[serde(default = "default_features")]
    pub n_features: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub female_fraction: Option<f64>,
}

fn default_features() -> usize {
    25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasConfig {
    pub site_id: String,
    pub additive_factor: f64,
    pub slope_factor: f64,
    pub noise_factor: f64,
    /// `γ = gamma_scale·α` unless `gamma` is given.
    #[serde(default = "default_gamma_scale")]
    pub gamma_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<Vec<f64>>,
}

fn default_gamma_scale() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathologyConfig {
    #[serde(flatten)]
    pub spec: PathologySpec,
    pub seed: u64,
}

impl PopulationConfig {
    pub fn resolve(&self) -> PopulationSpec {
        match self {
            Self::Explicit(spec) => spec.clone(),
            Self::Preset(p) => {
                let mut spec =
                    PopulationSpec::md_like(&p.site_id, p.n_subjects, p.n_features, p.seed);
                if let Some(r) = p.age_range {
                    spec.age_range = r;
                }
                if let Some(f) = p.female_fraction {
                    spec.female_fraction = f;
                }
                spec
            }
        }
    }
}

impl BiasConfig {
    pub fn resolve(&self, population: &PopulationSpec) -> BiasSpec {
        let mut bias = BiasSpec::for_population(
            population,
            self.additive_factor,
            self.slope_factor,
            self.noise_factor,
            self.gamma_scale,
        );
        if let Some(g) = &self.gamma {
            bias.gamma = g.clone();
        }
        if let Some(d) = &self.delta {
            bias.delta = d.clone();
        }
        bias
    }
}

impl SynthSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Argument(format!("synthesis spec: {e}")))
    }

    /// Population, then distortion, then pathology.
    pub fn generate(&self) -> Result<SyntheticCohort> {
        let population = self.population.resolve();
        let mut cohort = generate_cohort(&population)?;
        if let Some(b) = &self.bias {
            cohort = inject_bias(&cohort, &b.resolve(&population), &b.site_id)?;
        }
        if let Some(p) = &self.pathology {
            cohort = mark_pathology(&cohort, &p.spec, p.seed)?;
        }
        Ok(cohort)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::AGE;
    use approx::assert_relative_eq;

    fn small(n: usize, seed: u64) -> PopulationSpec {
        PopulationSpec::md_like("camcan", n, 4, seed)
    }

    #[test]
    fn camcan_counts() {
        let c = generate_cohort(&PopulationSpec::camcan_like("camcan", 25, 1)).unwrap();
        assert_eq!(c.table.level_counts(SEX).unwrap(), vec![224, 217]);
        assert_eq!(c.table.feature_names()[0], "feature_01");
        assert!((0..c.len()).all(|i| (18.0..=87.0).contains(&c.table.number(i, AGE).unwrap())));
    }

    #[test]
    fn noiseless_rows_lie_on_plane() {
        let mut spec = small(20, 2);
        spec.sigma = vec![0.0; 4];
        let c = generate_cohort(&spec).unwrap();
        for (j, row) in c.table.rows().iter().enumerate() {
            let age = c.table.number(j, AGE).unwrap();
            let f = f64::from(u8::from(c.table.level(j, SEX) == Some("F")));
            for v in 0..4 {
                let plane = spec.alpha[v] + age * spec.beta_age[v] + f * spec.beta_sex[v];
                assert_relative_eq!(row.features[v], plane, max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn mean_age_of_large_cohort() {
        let mut spec = PopulationSpec::md_like("a", 10_000, 1, 3);
        spec.age_range = [20.0, 90.0];
        let c = generate_cohort(&spec).unwrap();
        let mean = (0..c.len())
            .map(|i| c.table.number(i, AGE).unwrap())
            .sum::<f64>()
            / c.len() as f64;
        assert!((mean - 55.0).abs() < 0.5, "{mean}");
    }

    #[test]
    fn deterministic() {
        assert_eq!(
            generate_cohort(&small(30, 4)).unwrap(),
            generate_cohort(&small(30, 4)).unwrap()
        );
        assert_ne!(
            generate_cohort(&small(30, 4)).unwrap().table,
            generate_cohort(&small(30, 5)).unwrap().table
        );
    }

    #[test]
    fn identity_bias_keeps_values() {
        let c = generate_cohort(&small(30, 6)).unwrap();
        let b = inject_bias(&c, &BiasSpec::identity(4), "camcan").unwrap();
        assert_eq!(b.table, c.table);
        assert_eq!(c.truth().unwrap(), c.table);
    }

    #[test]
    fn bias_by_hand() {
        let mut spec = PopulationSpec::md_like("a", 1, 1, 0);
        spec.alpha = vec![0.7];
        let mut c = generate_cohort(&spec).unwrap();
        c.covariate_effect = vec![vec![0.2]];
        c.noise = vec![vec![0.01]];
        let bias = BiasSpec {
            additive_factor: 2.0,
            slope_factor: 0.5,
            noise_factor: 3.0,
            gamma: vec![0.1],
            delta: vec![1.0],
        };
        let out = inject_bias(&c, &bias, "m").unwrap();
        assert_relative_eq!(out.table.rows()[0].features[0], 1.03, epsilon = 1e-12);
        assert_eq!(out.table.rows()[0].site, "m");
    }

    #[test]
    fn noise_factor_scales_residuals() {
        let spec = small(50, 7);
        let c = generate_cohort(&spec).unwrap();
        let bias = BiasSpec::for_population(&spec, 1.0, 1.0, 2.5, 0.0);
        let out = inject_bias(&c, &bias, "m").unwrap();
        for j in 0..50 {
            for v in 0..4 {
                let plane = spec.alpha[v] + c.covariate_effect[j][v];
                let r0 = c.table.rows()[j].features[v] - plane;
                let r1 = out.table.rows()[j].features[v] - plane;
                assert_relative_eq!(r1, 2.5 * r0, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn pathology_marks_rows() {
        let spec = small(200, 8);
        let c = generate_cohort(&spec).unwrap();
        let biased = inject_bias(
            &c,
            &BiasSpec::for_population(&spec, 1.0, 1.0, 1.0, 0.1),
            "m",
        )
        .unwrap();
        let p = PathologySpec {
            fraction: 0.5,
            additive_factor: 0.8,
            multiplicative_factor: 0.8,
            label: "AD".into(),
        };
        let out = mark_pathology(&biased, &p, 3).unwrap();
        let ad: Vec<usize> = (0..200)
            .filter(|&i| out.table.label(i, DIAGNOSIS) == Some("AD"))
            .collect();
        assert_eq!(ad.len(), 100);
        let healthy = out.healthy_counterfactual().unwrap();
        for (h, b) in healthy.rows().iter().zip(biased.table.rows()) {
            assert_eq!(h.features, b.features);
        }
        for j in 0..200 {
            let changed = out.table.rows()[j].features != biased.table.rows()[j].features;
            assert_eq!(changed, ad.contains(&j));
        }
        let none = PathologySpec { fraction: 0.0, ..p };
        assert_eq!(mark_pathology(&biased, &none, 3).unwrap(), biased);
    }

    #[test]
    fn spec_file_generates() {
        let text = r#"
[population]
site_id = "camcan"
n_subjects = 40
n_features = 3
seed = 5

[bias]
site_id = "modified"
additive_factor = 0.8
slope_factor = 0.8
noise_factor = 1.1

[pathology]
fraction = 0.25
additive_factor = 0.9
multiplicative_factor = 0.9
seed = 2
"#;
        let spec = SynthSpec::from_toml_str(text).unwrap();
        let c = spec.generate().unwrap();
        assert_eq!(c.len(), 40);
        assert_eq!(c.table.sites(), vec!["modified".to_string()]);
        assert_eq!(c.pathology.iter().filter(|p| p.is_some()).count(), 10);
        let mut latent = Vec::new();
        c.write_latent(&mut latent).unwrap();
        assert_eq!(String::from_utf8(latent).unwrap().lines().count(), 41);
    }
}
