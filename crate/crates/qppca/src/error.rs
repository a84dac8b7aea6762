use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("characteristic column '{name}' (index {index}) is constant")]
    ConstantColumn { index: usize, name: String },

    #[error("quantile level tau={0} must lie strictly inside (0, 1)")]
    InvalidTau(f64),

    #[error("design matrix is rank deficient (smallest singular value {smallest:.3e} < {threshold:.3e})")]
    RankDeficient { smallest: f64, threshold: f64 },

    #[error("quantile solver did not converge in {iterations} iterations (kkt residual {kkt_residual:.3e})")]
    NoConvergence {
        iterations: usize,
        kkt_residual: f64,
    },

    #[error("singular matrix in {0}")]
    Singular(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("period t={t}: {source}")]
    Period { t: usize, source: Box<Error> },

    #[error("stage '{stage}': {source}")]
    Stage { stage: String, source: Box<Error> },

    #[error("data error in {path} (row {row}, column {column}): {message}")]
    Data {
        path: String,
        row: usize,
        column: String,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wrap an error with the pipeline stage that produced it.
    pub fn in_stage(self, stage: &str) -> Error {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }

    /// Wrap an error with the panel period it occurred in.
    pub fn in_period(self, t: usize) -> Error {
        Error::Period {
            t,
            source: Box::new(self),
        }
    }

    /// Short machine-readable tag used by the CLI error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ConstantColumn { .. } => "constant_column",
            Error::InvalidTau(_) => "invalid_tau",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::NoConvergence { .. } => "no_convergence",
            Error::Singular(_) => "singular",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::Period { source, .. } => source.kind(),
            Error::Stage { source, .. } => source.kind(),
            Error::Data { .. } => "data",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
