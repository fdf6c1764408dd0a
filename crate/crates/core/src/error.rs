use std::path::PathBuf;

use thiserror::Error;

use crate::data::SchemaViolation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed delimited text: {0}")]
    Csv(#[from] csv::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("schema does not match the input header: {}", format_violations(.0))]
    Schema(Vec<SchemaViolation>),

    #[error("group `{group}` has no rows after filtering")]
    EmptyGroup { group: String },

    #[error("row {row}: column `{column}` value `{value}` is not numeric")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("duplicate row_id {0}")]
    DuplicateRowId(i64),

    #[error("prediction file line {line}: {message}")]
    Prediction { line: usize, message: String },

    #[error("training diverged ({0}); try a smaller learning rate")]
    Training(String),

    #[error("dimension mismatch: expected {expected} features, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("fold count {k} out of range for {n} rows (need 2 <= k <= n)")]
    FoldRange { k: usize, n: usize },

    #[error("training split of fold {fold} lacks one outcome class")]
    FoldMissingClass { fold: usize },

    #[error("statistic `{statistic}` is defined in fewer than 2 folds for at least one group")]
    InsufficientSample { statistic: String },

    #[error("only {usable} usable calibration bins; at least 2 are required")]
    InsufficientBins { usable: usize },

    #[error("matrix error: {0}")]
    Matrix(String),

    #[error("no rows in the target group for matching")]
    EmptyTargetGroup,

    #[error("the group attribute is not a model feature; enable --include-race to run counterfactual tests")]
    GroupNotAFeature,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn format_violations(v: &[SchemaViolation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user input rather than an internal failure.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Matrix(_) | Error::Training(_))
    }
}
