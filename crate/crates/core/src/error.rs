use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("row {row}: {message}")]
    Parse { row: u64, message: String },

    #[error("row {row}: missing value in column `{column}`")]
    MissingValue { row: u64, column: String },

    #[error("covariate `{name}` has arity {arity}; at least 2 distinct values are required")]
    DegenerateArity { name: String, arity: u32 },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate holdout: {0}")]
    DegenerateHoldout(String),

    #[error("no matched groups; treatment effect cannot be estimated")]
    NoEstimate,

    #[error("cannot emit SQL: {0}")]
    SqlEmission(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by the input data rather than by the caller's arguments.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::MissingColumn(_)
                | Error::Schema(_)
                | Error::Parse { .. }
                | Error::MissingValue { .. }
                | Error::DegenerateArity { .. }
                | Error::InvalidData(_)
                | Error::DegenerateHoldout(_)
                | Error::Csv(_)
        )
    }
}
