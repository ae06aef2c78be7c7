//! Cohort tables, covariate schemas, design matrices and seeded subsetting.

mod design;
mod sampling;
mod schema;
mod table;

pub use design::{build_design, DesignMatrix};
pub use sampling::{sample_indices, split_indices, split_train_test, stratified_sample, AGE, SEX};
pub use schema::{Covariate, CovariateKind, CovariateSchema, SITE_COLUMN, SUBJECT_COLUMN};
pub use table::{format_f64, CohortTable, CovariateValue, Subject};

pub(crate) use table::{check_same_features, csv_io};

/// Parses a cohort file against `schema`.
pub fn load_cohort<R: std::io::Read>(
    source: R,
    schema: &CovariateSchema,
) -> crate::Result<CohortTable> {
    CohortTable::read_csv(source, schema)
}

pub fn save_cohort<W: std::io::Write>(table: &CohortTable, sink: W) -> crate::Result<()> {
    table.write_csv(sink)
}
