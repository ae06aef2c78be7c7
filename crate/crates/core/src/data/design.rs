//! Covariate design matrices: intercept, continuous columns, then dummy columns.

use nalgebra::DMatrix;

use crate::data::schema::CovariateSchema;
use crate::data::table::{CohortTable, CovariateValue};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    matrix: DMatrix<f64>,
    labels: Vec<String>,
    schema: CovariateSchema,
}

impl DesignMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// The schema this matrix was encoded under.
    pub fn schema(&self) -> &CovariateSchema {
        &self.schema
    }

    pub fn column_labels(&self) -> &[String] {
        &self.labels
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.matrix.row(i).iter().copied().collect()
    }
}

/// Encodes `table` under `schema`. Covariates are looked up by name, so the
/// schema may drop covariates the table carries (e.g. fitting without sex).
pub fn build_design(table: &CohortTable, schema: &CovariateSchema) -> Result<DesignMatrix> {
    let mut positions = Vec::with_capacity(schema.covariates.len());
    for cov in &schema.covariates {
        let k = table
            .schema()
            .position(&cov.name)
            .ok_or_else(|| Error::Schema(format!("table has no covariate `{}`", cov.name)))?;
        if table.schema().covariates[k].kind != cov.kind {
            return Err(Error::Schema(format!(
                "covariate `{}` is declared differently",
                cov.name
            )));
        }
        positions.push(k);
    }

    let mut labels = vec!["intercept".to_string()];
    let continuous: Vec<(usize, usize)> = schema
        .covariates
        .iter()
        .zip(&positions)
        .filter(|(c, _)| c.is_continuous())
        .map(|(c, &k)| {
            labels.push(c.name.clone());
            (k, 0)
        })
        .collect();
    // (table position, level index) for every non-reference level
    let mut dummies = Vec::new();
    for (cov, &k) in schema.covariates.iter().zip(&positions) {
        if let Some(levels) = cov.levels() {
            for (l, level) in levels.iter().enumerate().skip(1) {
                labels.push(format!("{}_{}", cov.name, level));
                dummies.push((k, l));
            }
        }
    }

    let n = table.len();
    let rows = table.rows();
    let matrix = DMatrix::from_fn(n, labels.len(), |i, j| {
        if j == 0 {
            return 1.0;
        }
        let (k, level) = if j <= continuous.len() {
            continuous[j - 1]
        } else {
            dummies[j - 1 - continuous.len()]
        };
        match rows[i].covariates[k] {
            CovariateValue::Number(x) => x,
            CovariateValue::Level(l) => f64::from(u8::from(l == level)),
        }
    });
    Ok(DesignMatrix {
        matrix,
        labels,
        schema: schema.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::schema::Covariate;
    use crate::data::table::Subject;

    fn table(schema: &CovariateSchema, rows: &[(f64, usize)]) -> CohortTable {
        let rows = rows
            .iter()
            .enumerate()
            .map(|(i, &(age, sex))| Subject {
                subject_id: format!("s{i}"),
                site: "a".into(),
                covariates: if schema.covariates.len() == 2 {
                    vec![CovariateValue::Number(age), CovariateValue::Level(sex)]
                } else {
                    vec![CovariateValue::Number(age)]
                },
                labels: vec![],
                features: vec![0.0],
            })
            .collect();
        CohortTable::new(schema.clone(), vec!["f".into()], rows).unwrap()
    }

    fn age_sex() -> CovariateSchema {
        CovariateSchema {
            labels: vec![],
            covariates: vec![
                Covariate::continuous("age", None),
                Covariate::categorical("sex", &["M", "F"]),
            ],
        }
    }

    #[test]
    fn continuous_only() {
        let schema = CovariateSchema {
            labels: vec![],
            covariates: vec![Covariate::continuous("age", None)],
        };
        let d = build_design(&table(&schema, &[(20.0, 0), (40.0, 0)]), &schema).unwrap();
        assert_eq!(d.row(0), vec![1.0, 20.0]);
        assert_eq!(d.row(1), vec![1.0, 40.0]);
    }

    #[test]
    fn dummy_coding_drops_first_level() {
        let schema = age_sex();
        let d = build_design(
            &table(&schema, &[(30.0, 0), (31.0, 1), (32.0, 1), (33.0, 0)]),
            &schema,
        )
        .unwrap();
        assert_eq!((d.nrows(), d.ncols()), (4, 3));
        assert_eq!(d.column_labels(), ["intercept", "age", "sex_F"]);
        assert_eq!(d.row(0), vec![1.0, 30.0, 0.0]);
        assert_eq!(d.row(1), vec![1.0, 31.0, 1.0]);
        assert_eq!(schema.design_width(), d.ncols());
    }

    #[test]
    fn sub_schema_drops_covariate() {
        let schema = age_sex();
        let t = table(&schema, &[(30.0, 0), (31.0, 1)]);
        let d = build_design(&t, &schema.without(&["sex"])).unwrap();
        assert_eq!(d.column_labels(), ["intercept", "age"]);
        assert!(build_design(
            &t,
            &CovariateSchema {
                labels: vec![],
                covariates: vec![Covariate::continuous("height", None)],
            }
        )
        .is_err());
    }
}
