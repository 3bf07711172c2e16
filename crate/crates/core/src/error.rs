use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the design engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown site id {0}")]
    UnknownSite(u64),
    #[error("unknown segment id {0}")]
    UnknownSegment(u64),
    #[error("sites {0} and {1} lie on disconnected network components")]
    Disconnected(u64, u64),
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),
    #[error("need at least {needed} sites carrying the covariate, found {found}")]
    TooFewNeighbours { needed: usize, found: usize },
    #[error("negative distance {0}")]
    NegativeDistance(f64),
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("response outside support: {0}")]
    OutOfSupport(String),
    #[error("non-finite objective: {0}")]
    NonFinite(String),
    #[error("{failed} of {total} utility draws failed, above the 5% tolerance")]
    ExcessFailures { failed: usize, total: usize },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("combinatorial budget exceeded: {count} designs (limit {limit})")]
    BudgetExceeded { count: u128, limit: u128 },
    #[error("invalid design: {0}")]
    InvalidDesign(String),
    #[error("value {value} for window `{window}` outside domain [{lo}, {hi}]")]
    OutOfDomain { window: String, value: f64, lo: f64, hi: f64 },
    #[error("unknown window `{0}`")]
    UnknownWindow(String),
    #[error("emulator fit failed: {0}")]
    FitFailed(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }
}
