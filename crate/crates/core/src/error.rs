use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("load error at row {row}, column `{column}`: {message}")]
    Load {
        row: usize,
        column: String,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("sampling error: requested {requested} subjects but only {available} are eligible ({detail})")]
    Sampling {
        requested: usize,
        available: usize,
        detail: String,
    },

    #[error("site `{site}` has {n} subject(s); at least 2 are required")]
    SiteTooSmall { site: String, n: usize },

    #[error("rank-deficient design: column(s) {} are collinear with the preceding columns", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("not enough subjects ({subjects}) for {columns} design columns")]
    Underdetermined { subjects: usize, columns: usize },

    #[error("unknown site `{site}`; known sites: {}", .known.join(", "))]
    UnknownSite { site: String, known: Vec<String> },

    #[error("feature mismatch: {0}")]
    FeatureMismatch(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("model format error: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Numerical failures (as opposed to bad input) map to a distinct CLI exit code.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerical(_) | Error::RankDeficient { .. } | Error::Underdetermined { .. }
        )
    }
}
