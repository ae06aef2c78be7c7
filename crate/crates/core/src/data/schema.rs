//! Covariate schemas: which columns of a cohort file are covariates, and how
//! they enter the linear model.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CovariateKind {
    Continuous {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        unit: Option<String>,
    },
    /// The first level is the reference level and gets no dummy column.
    Categorical { levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariate {
    pub name: String,
    #[serde(flatten)]
    pub kind: CovariateKind,
}

impl Covariate {
    pub fn continuous(name: &str, unit: Option<&str>) -> Self {
        Self {
            name: name.to_string(),
            kind: CovariateKind::Continuous {
                unit: unit.map(str::to_string),
            },
        }
    }

    pub fn categorical(name: &str, levels: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            kind: CovariateKind::Categorical {
                levels: levels.iter().map(|l| l.to_string()).collect(),
            },
        }
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self.kind, CovariateKind::Continuous { .. })
    }

    pub fn levels(&self) -> Option<&[String]> {
        match &self.kind {
            CovariateKind::Categorical { levels } => Some(levels),
            CovariateKind::Continuous { .. } => None,
        }
    }
}

/// Ordered list of covariates plus free-text label columns (e.g. `diagnosis`)
/// that travel with each row but never enter the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSchema {
    #[serde(default)]
    pub labels: Vec<String>,
    #[serde(default)]
    pub covariates: Vec<Covariate>,
}

pub const SUBJECT_COLUMN: &str = "subject_id";
pub const SITE_COLUMN: &str = "site";

impl CovariateSchema {
    pub fn new(covariates: Vec<Covariate>, labels: Vec<String>) -> Result<Self> {
        let schema = Self { labels, covariates };
        schema.validate()?;
        Ok(schema)
    }

    /// `age` in years and `sex` with levels `M`, `F`, plus a `diagnosis` label.
    pub fn age_sex() -> Self {
        Self {
            labels: vec!["diagnosis".to_string()],
            covariates: vec![
                Covariate::continuous("age", Some("years")),
                Covariate::categorical("sex", &["M", "F"]),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        let names = self
            .covariates
            .iter()
            .map(|c| c.name.as_str())
            .chain(self.labels.iter().map(String::as_str));
        for name in names {
            if name == SUBJECT_COLUMN || name == SITE_COLUMN {
                return Err(Error::Schema(format!("`{name}` is a reserved column name")));
            }
            if !valid_identifier(name) {
                return Err(Error::Schema(format!("invalid column name `{name}`")));
            }
            if !seen.insert(name) {
                return Err(Error::Schema(format!("duplicate column name `{name}`")));
            }
        }
        for cov in &self.covariates {
            if let Some(levels) = cov.levels() {
                if levels.len() < 2 {
                    return Err(Error::Schema(format!(
                        "categorical covariate `{}` needs at least 2 levels",
                        cov.name
                    )));
                }
                let distinct: HashSet<_> = levels.iter().collect();
                if distinct.len() != levels.len() {
                    return Err(Error::Schema(format!(
                        "categorical covariate `{}` has duplicate levels",
                        cov.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.covariates.iter().position(|c| c.name == name)
    }

    pub fn label_position(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == name)
    }

    pub fn covariate(&self, name: &str) -> Option<&Covariate> {
        self.covariates.iter().find(|c| c.name == name)
    }

    /// A copy of this schema without the named covariates.
    pub fn without(&self, names: &[&str]) -> Self {
        Self {
            labels: self.labels.clone(),
            covariates: self
                .covariates
                .iter()
                .filter(|c| !names.contains(&c.name.as_str()))
                .cloned()
                .collect(),
        }
    }

    /// Design column count, intercept included.
    pub fn design_width(&self) -> usize {
        1 + self
            .covariates
            .iter()
            .map(|c| c.levels().map_or(1, |l| l.len() - 1))
            .sum::<usize>()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let schema: Self =
            toml::from_str(text).map_err(|e| Error::Schema(format!("cannot parse schema: {e}")))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

pub(crate) fn valid_identifier(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let schema = CovariateSchema::age_sex();
        let text = schema.to_toml_string();
        assert_eq!(CovariateSchema::from_toml_str(&text).unwrap(), schema);
    }

    #[test]
    fn parses_handwritten_schema() {
        let text = r#"
labels = ["diagnosis"]

[[covariates]]
name = "age"
kind = "continuous"
unit = "years"

[[covariates]]
name = "sex"
kind = "categorical"
levels = ["M", "F"]
"#;
        let schema = CovariateSchema::from_toml_str(text).unwrap();
        assert_eq!(schema, CovariateSchema::age_sex());
        assert_eq!(schema.design_width(), 3);
    }

    #[test]
    fn rejects_duplicates_and_single_level() {
        let dup = CovariateSchema {
            labels: vec![],
            covariates: vec![
                Covariate::continuous("age", None),
                Covariate::continuous("age", None),
            ],
        };
        assert!(matches!(dup.validate(), Err(Error::Schema(_))));

        let single = CovariateSchema {
            labels: vec![],
            covariates: vec![Covariate::categorical("sex", &["M"])],
        };
        assert!(matches!(single.validate(), Err(Error::Schema(_))));

        let reserved = CovariateSchema {
            labels: vec!["site".into()],
            covariates: vec![],
        };
        assert!(reserved.validate().is_err());
    }

    #[test]
    fn design_width_counts_dummies() {
        let schema = CovariateSchema {
            labels: vec![],
            covariates: vec![
                Covariate::continuous("age", None),
                Covariate::categorical("scanner", &["a", "b", "c"]),
            ],
        };
        assert_eq!(schema.design_width(), 1 + 1 + 2);
        assert_eq!(schema.without(&["scanner"]).design_width(), 2);
    }
}
