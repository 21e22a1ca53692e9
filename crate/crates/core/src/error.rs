use thiserror::Error;

/// Errors produced while preparing data or computing cluster statistics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("non-numeric value `{value}` in numeric column `{column}` (row {row})")]
    NonNumeric {
        column: String,
        row: usize,
        value: String,
    },

    #[error("filter: {0}")]
    Filter(String),

    #[error("invalid model: {0}")]
    InvalidSpec(String),

    #[error("no observations left after filtering and listwise deletion")]
    EmptyData,

    #[error("coefficient `{0}` is not identified")]
    NotIdentified(String),

    #[error("design is rank deficient; collinear columns: {0:?}")]
    RankDeficient(Vec<String>),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("at least 2 clusters are required, found {0}")]
    TooFewClusters(usize),

    #[error("rho must be in [0,1], got {0}")]
    InvalidRho(f64),

    #[error("infeasible cluster sizes: {0}")]
    InfeasibleSizes(String),

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
