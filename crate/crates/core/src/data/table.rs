//! Cohort tables and their comma-delimited text form.

use std::collections::{BTreeSet, HashSet};
use std::io::{Read, Write};

use crate::data::schema::{valid_identifier, CovariateSchema, SITE_COLUMN, SUBJECT_COLUMN};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovariateValue {
    Number(f64),
    /// Index into the covariate's declared level list.
    Level(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub subject_id: String,
    pub site: String,
    pub covariates: Vec<CovariateValue>,
    pub labels: Vec<String>,
    pub features: Vec<f64>,
}

/// Subjects × (site, covariates, labels, features). Immutable once built;
/// every transformation returns a new table.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortTable {
    schema: CovariateSchema,
    feature_names: Vec<String>,
    rows: Vec<Subject>,
}

impl CohortTable {
    pub fn new(
        schema: CovariateSchema,
        feature_names: Vec<String>,
        rows: Vec<Subject>,
    ) -> Result<Self> {
        schema.validate()?;
        if feature_names.is_empty() {
            return Err(Error::Schema("a cohort needs at least one feature".into()));
        }
        let mut names = HashSet::new();
        for name in &feature_names {
            if !valid_identifier(name) {
                return Err(Error::Schema(format!("invalid feature name `{name}`")));
            }
            if !names.insert(name.as_str())
                || schema.position(name).is_some()
                || schema.label_position(name).is_some()
                || name == SUBJECT_COLUMN
                || name == SITE_COLUMN
            {
                return Err(Error::Schema(format!(
                    "feature name `{name}` clashes with another column"
                )));
            }
        }
        let table = Self {
            schema,
            feature_names,
            rows,
        };
        table.validate_rows()?;
        Ok(table)
    }

    /// An empty table sharing this table's columns.
    pub fn empty_like(&self) -> Self {
        Self {
            schema: self.schema.clone(),
            feature_names: self.feature_names.clone(),
            rows: Vec::new(),
        }
    }

    fn validate_rows(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for (i, row) in self.rows.iter().enumerate() {
            let err = |column: &str, message: String| Error::Load {
                row: i + 1,
                column: column.to_string(),
                message,
            };
            if !valid_identifier(&row.subject_id) {
                return Err(err(
                    SUBJECT_COLUMN,
                    format!("invalid identifier `{}`", row.subject_id),
                ));
            }
            if !valid_identifier(&row.site) {
                return Err(err(
                    SITE_COLUMN,
                    format!("invalid identifier `{}`", row.site),
                ));
            }
            if !ids.insert((row.site.as_str(), row.subject_id.as_str())) {
                return Err(err(
                    SUBJECT_COLUMN,
                    format!(
                        "duplicate subject `{}` in site `{}`",
                        row.subject_id, row.site
                    ),
                ));
            }
            if row.covariates.len() != self.schema.covariates.len() {
                return Err(err("<covariates>", "covariate arity mismatch".into()));
            }
            for (cov, value) in self.schema.covariates.iter().zip(&row.covariates) {
                match (cov.levels(), value) {
                    (None, CovariateValue::Number(x)) if x.is_finite() => {}
                    (Some(levels), CovariateValue::Level(k)) if *k < levels.len() => {}
                    _ => return Err(err(&cov.name, "invalid covariate value".into())),
                }
            }
            if row.labels.len() != self.schema.labels.len() {
                return Err(err("<labels>", "label arity mismatch".into()));
            }
            if row.features.len() != self.feature_names.len() {
                return Err(err("<features>", "feature arity mismatch".into()));
            }
            if let Some(v) = row.features.iter().position(|x| !x.is_finite()) {
                return Err(err(&self.feature_names[v], "non-finite value".into()));
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> &CovariateSchema {
        &self.schema
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn rows(&self) -> &[Subject] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Distinct site ids, sorted.
    pub fn sites(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| r.site.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn feature_column(&self, v: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.features[v]).collect()
    }

    /// Value of a continuous covariate on row `i`.
    pub fn number(&self, i: usize, name: &str) -> Option<f64> {
        let k = self.schema.position(name)?;
        match self.rows[i].covariates[k] {
            CovariateValue::Number(x) => Some(x),
            CovariateValue::Level(_) => None,
        }
    }

    /// Level name of a categorical covariate on row `i`.
    pub fn level(&self, i: usize, name: &str) -> Option<&str> {
        let k = self.schema.position(name)?;
        let levels = self.schema.covariates[k].levels()?;
        match self.rows[i].covariates[k] {
            CovariateValue::Level(l) => Some(levels[l].as_str()),
            CovariateValue::Number(_) => None,
        }
    }

    pub fn label(&self, i: usize, name: &str) -> Option<&str> {
        let k = self.schema.label_position(name)?;
        Some(self.rows[i].labels[k].as_str())
    }

    /// Per-level row counts of a categorical covariate, in declared level order.
    pub fn level_counts(&self, name: &str) -> Option<Vec<usize>> {
        let k = self.schema.position(name)?;
        let mut counts = vec![0; self.schema.covariates[k].levels()?.len()];
        for row in &self.rows {
            if let CovariateValue::Level(l) = row.covariates[k] {
                counts[l] += 1;
            }
        }
        Some(counts)
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            schema: self.schema.clone(),
            feature_names: self.feature_names.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    pub fn filter(&self, mut keep: impl FnMut(usize, &Subject) -> bool) -> Self {
        Self {
            schema: self.schema.clone(),
            feature_names: self.feature_names.clone(),
            rows: self
                .rows
                .iter()
                .enumerate()
                .filter(|(i, r)| keep(*i, r))
                .map(|(_, r)| r.clone())
                .collect(),
        }
    }

    pub fn site_indices(&self, site: &str) -> Vec<usize> {
        (0..self.rows.len())
            .filter(|&i| self.rows[i].site == site)
            .collect()
    }

    /// Same rows relabeled to a single site.
    pub fn with_site(&self, site: &str) -> Result<Self> {
        let mut rows = self.rows.clone();
        for r in &mut rows {
            r.site = site.to_string();
        }
        Self::new(self.schema.clone(), self.feature_names.clone(), rows)
    }

    /// Same rows with replaced feature values (`values[i]` for row `i`).
    pub fn with_features(&self, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != self.rows.len() {
            return Err(Error::Argument("feature matrix row count mismatch".into()));
        }
        let mut rows = self.rows.clone();
        for (r, f) in rows.iter_mut().zip(values) {
            r.features = f;
        }
        Self::new(self.schema.clone(), self.feature_names.clone(), rows)
    }

    /// Same rows re-typed under a different schema. Covariates are matched by
    /// name, so `schema` must be a subset of the current one with identical
    /// level lists.
    pub fn project(&self, schema: &CovariateSchema) -> Result<Self> {
        let mut cov_map = Vec::with_capacity(schema.covariates.len());
        for cov in &schema.covariates {
            let k = self.schema.position(&cov.name).ok_or_else(|| {
                Error::Schema(format!("covariate `{}` is not in the table", cov.name))
            })?;
            if self.schema.covariates[k].kind != cov.kind {
                return Err(Error::Schema(format!(
                    "covariate `{}` has a different definition",
                    cov.name
                )));
            }
            cov_map.push(k);
        }
        let mut label_map = Vec::with_capacity(schema.labels.len());
        for label in &schema.labels {
            label_map.push(
                self.schema
                    .label_position(label)
                    .ok_or_else(|| Error::Schema(format!("label `{label}` is not in the table")))?,
            );
        }
        let rows = self
            .rows
            .iter()
            .map(|r| Subject {
                subject_id: r.subject_id.clone(),
                site: r.site.clone(),
                covariates: cov_map.iter().map(|&k| r.covariates[k]).collect(),
                labels: label_map.iter().map(|&k| r.labels[k].clone()).collect(),
                features: r.features.clone(),
            })
            .collect();
        Self::new(schema.clone(), self.feature_names.clone(), rows)
    }

    /// Row-wise union; both tables must have the same columns.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.schema != other.schema {
            return Err(Error::Schema(
                "cannot concatenate tables with different schemas".into(),
            ));
        }
        check_same_features(&self.feature_names, &other.feature_names)?;
        let mut rows = self.rows.clone();
        rows.extend(other.rows.iter().cloned());
        Self::new(self.schema.clone(), self.feature_names.clone(), rows)
    }

    /// Reads a comma-delimited table whose header names `subject_id`, `site`,
    /// every schema covariate and label; all other columns are features.
    pub fn read_csv<R: Read>(source: R, schema: &CovariateSchema) -> Result<Self> {
        schema.validate()?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(source);
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| load_err(1, "<header>", e.to_string()))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();

        let find = |name: &str| header.iter().position(|h| h == name);
        let missing = |name: &str| load_err(1, name, "missing column".into());
        let subject_col = find(SUBJECT_COLUMN).ok_or_else(|| missing(SUBJECT_COLUMN))?;
        let site_col = find(SITE_COLUMN).ok_or_else(|| missing(SITE_COLUMN))?;
        let cov_cols = schema
            .covariates
            .iter()
            .map(|c| find(&c.name).ok_or_else(|| missing(&c.name)))
            .collect::<Result<Vec<_>>>()?;
        let label_cols = schema
            .labels
            .iter()
            .map(|l| find(l).ok_or_else(|| missing(l)))
            .collect::<Result<Vec<_>>>()?;
        let reserved: HashSet<usize> = [subject_col, site_col]
            .into_iter()
            .chain(cov_cols.iter().copied())
            .chain(label_cols.iter().copied())
            .collect();
        let feature_cols: Vec<usize> = (0..header.len())
            .filter(|c| !reserved.contains(c))
            .collect();
        let feature_names: Vec<String> = feature_cols.iter().map(|&c| header[c].clone()).collect();

        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let line = i + 2;
            let record = record.map_err(|e| load_err(line, "<row>", e.to_string()))?;
            if record.len() != header.len() {
                return Err(load_err(
                    line,
                    "<row>",
                    format!("expected {} fields, found {}", header.len(), record.len()),
                ));
            }
            let field = |c: usize| record[c].trim();
            let mut covariates = Vec::with_capacity(cov_cols.len());
            for (cov, &c) in schema.covariates.iter().zip(&cov_cols) {
                let text = field(c);
                let value = match cov.levels() {
                    Some(levels) => {
                        CovariateValue::Level(levels.iter().position(|l| l == text).ok_or_else(
                            || load_err(line, &cov.name, format!("unknown level `{text}`")),
                        )?)
                    }
                    None => CovariateValue::Number(
                        parse_number(text).map_err(|m| load_err(line, &cov.name, m))?,
                    ),
                };
                covariates.push(value);
            }
            let features = feature_cols
                .iter()
                .map(|&c| parse_number(field(c)).map_err(|m| load_err(line, &header[c], m)))
                .collect::<Result<Vec<_>>>()?;
            rows.push(Subject {
                subject_id: field(subject_col).to_string(),
                site: field(site_col).to_string(),
                covariates,
                labels: label_cols.iter().map(|&c| field(c).to_string()).collect(),
                features,
            });
        }
        Self::new(schema.clone(), feature_names, rows).map_err(|e| match e {
            Error::Load {
                row,
                column,
                message,
            } => Error::Load {
                row: row + 1,
                column,
                message,
            },
            other => other,
        })
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut writer = csv::WriterBuilder::new().from_writer(sink);
        let mut header = vec![SUBJECT_COLUMN.to_string(), SITE_COLUMN.to_string()];
        header.extend(self.schema.covariates.iter().map(|c| c.name.clone()));
        header.extend(self.schema.labels.iter().cloned());
        header.extend(self.feature_names.iter().cloned());
        writer.write_record(&header).map_err(csv_io)?;
        for row in &self.rows {
            let mut record = vec![row.subject_id.clone(), row.site.clone()];
            for (cov, value) in self.schema.covariates.iter().zip(&row.covariates) {
                record.push(match (value, cov.levels()) {
                    (CovariateValue::Level(k), Some(levels)) => levels[*k].clone(),
                    (CovariateValue::Number(x), _) => format_f64(*x),
                    (CovariateValue::Level(k), None) => k.to_string(),
                });
            }
            record.extend(row.labels.iter().cloned());
            record.extend(row.features.iter().map(|&x| format_f64(x)));
            writer.write_record(&record).map_err(csv_io)?;
        }
        writer.flush()?;
        Ok(())
    }
}

pub(crate) fn check_same_features(a: &[String], b: &[String]) -> Result<()> {
    if a == b {
        return Ok(());
    }
    let first = a
        .iter()
        .zip(b)
        .find(|(x, y)| x != y)
        .map(|(x, y)| format!("`{x}` vs `{y}`"))
        .unwrap_or_else(|| format!("{} vs {} features", a.len(), b.len()));
    Err(Error::FeatureMismatch(first))
}

fn load_err(row: usize, column: &str, message: String) -> Error {
    Error::Load {
        row,
        column: column.to_string(),
        message,
    }
}

fn parse_number(text: &str) -> std::result::Result<f64, String> {
    let x: f64 = text
        .parse()
        .map_err(|_| format!("cannot parse `{text}` as a number"))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("non-finite value `{text}`"))
    }
}

pub(crate) fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Shortest decimal text that parses back to the identical `f64`.
pub fn format_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-5..1e16).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn load(text: &str) -> Result<CohortTable> {
        let schema = CovariateSchema {
            labels: vec![],
            covariates: CovariateSchema::age_sex().covariates,
        };
        CohortTable::read_csv(text.as_bytes(), &schema)
    }

    #[test]
    fn loads_smallest_table() {
        let t = load(
            "subject_id,site,age,sex,AF_L_MD\ns1,a,20,M,0.7\ns2,a,30,F,0.71\ns3,b,40.5,F,7.2e-1\n",
        )
        .unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.n_features(), 1);
        assert_eq!(t.feature_names(), ["AF_L_MD"]);
        assert_eq!(t.level_counts("sex").unwrap(), vec![1, 2]);
        assert_eq!(t.number(2, "age"), Some(40.5));
        assert_eq!(t.sites(), vec!["a", "b"]);
    }

    #[test]
    fn unknown_level_is_named() {
        let err = load("subject_id,site,age,sex,f\ns1,a,20,X,0.7\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("unknown level"), "{msg}");
        assert!(msg.contains("sex") && msg.contains("row 2"), "{msg}");
    }

    #[test]
    fn levels_are_case_sensitive() {
        assert!(load("subject_id,site,age,sex,f\ns1,a,20,m,0.7\n").is_err());
    }

    #[test]
    fn rejects_missing_column_bad_number_and_nan() {
        assert!(matches!(
            load("subject_id,site,sex,f\ns1,a,M,0.7\n"),
            Err(Error::Load { ref column, .. }) if column == "age"
        ));
        let err = load("subject_id,site,age,sex,f\ns1,a,20,M,abc\n").unwrap_err();
        assert!(matches!(err, Error::Load { row: 2, ref column, .. } if column == "f"));
        assert!(load("subject_id,site,age,sex,f\ns1,a,20,M,NaN\n").is_err());
        assert!(load("subject_id,site,age,sex,f\ns1,a,20,M,\n").is_err());
        assert!(load("subject_id,site,age,sex,f\ns1,a,20,M\n").is_err());
    }

    #[test]
    fn duplicate_subject_within_site_rejected() {
        assert!(load("subject_id,site,age,sex,f\ns1,a,20,M,1\ns1,a,21,F,2\n").is_err());
        assert!(load("subject_id,site,age,sex,f\ns1,a,20,M,1\ns1,b,21,F,2\n").is_ok());
    }

    #[test]
    fn format_is_shortest_round_trip() {
        for x in [
            0.0,
            1.0,
            -2.5e-3,
            5e-5,
            1e-7,
            0.1 + 0.2,
            1e300,
            f64::MIN_POSITIVE,
        ] {
            assert_eq!(format_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_exact(
            ages in prop::collection::vec(0.0f64..100.0, 1..20),
            scale in -12i32..12,
            seed in any::<u64>(),
        ) {
            let schema = CovariateSchema::age_sex();
            let rows: Vec<Subject> = ages.iter().enumerate().map(|(i, &age)| Subject {
                subject_id: format!("s{i}"),
                site: if i % 2 == 0 { "a".into() } else { "b".into() },
                covariates: vec![CovariateValue::Number(age), CovariateValue::Level(i % 2)],
                labels: vec!["HC".into()],
                features: vec![
                    age * 10f64.powi(scale) + (seed % 97) as f64 / 7.0,
                    (i as f64 + 0.1).ln() * 1e-3,
                ],
            }).collect();
            let table = CohortTable::new(schema.clone(), vec!["f1".into(), "f2".into()], rows).unwrap();
            let mut buf = Vec::new();
            table.write_csv(&mut buf).unwrap();
            let back = CohortTable::read_csv(buf.as_slice(), &schema).unwrap();
            prop_assert_eq!(back, table);
        }
    }
}
