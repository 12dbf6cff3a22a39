use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("panel is empty: {0}")]
    EmptyPanel(String),

    #[error("degenerate (zero-variance) columns: {}", .tickers.join(", "))]
    DegenerateColumns { tickers: Vec<String> },

    #[error("degenerate series: {0}")]
    DegenerateSeries(String),

    #[error("degenerate regressor: {0}")]
    DegenerateRegressor(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("eigendecomposition failed: {0}")]
    Decomposition(String),

    #[error("Marchenko-Pastur fit failed: {0}")]
    MpFit(String),

    #[error("coordinate descent did not converge after {sweeps} sweeps (max change {max_change:e})")]
    Convergence {
        sweeps: usize,
        max_change: f64,
        last: Vec<f64>,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("log of non-positive value {value} at m = {m}")]
    LogDomain { m: usize, value: f64 },

    #[error("data quality: {0}")]
    DataQuality(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("undefined normalization: {0}")]
    UndefinedNormalization(String),

    #[error("consistency check failed: {0}")]
    Consistency(String),

    #[error("asset {ticker}: {source}")]
    Asset {
        ticker: String,
        #[source]
        source: Box<Error>,
    },

    #[error("stage `{stage}`: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn at_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn for_asset(self, ticker: impl Into<String>) -> Error {
        Error::Asset {
            ticker: ticker.into(),
            source: Box::new(self),
        }
    }

    /// True for errors caused by the input data or configuration rather than
    /// by a bug or an environment failure.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::Io(_) => false,
            Error::Stage { source, .. } | Error::Asset { source, .. } => source.is_data_error(),
            _ => true,
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
