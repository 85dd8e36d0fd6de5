use thiserror::Error;

/// Errors raised across the simulation, learning and calibration stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("could not place {placed} of {requested} sub-networks with minimum distance {min_distance} m after {attempts} attempts")]
    Placement {
        requested: usize,
        placed: usize,
        min_distance: f64,
        attempts: usize,
    },

    #[error("series is degenerate (zero variance over the overlap)")]
    DegenerateSeries,

    #[error("trace too short: {len} cycles, need at least {needed}")]
    TraceTooShort { len: usize, needed: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error("insufficient exceedances for SA pair {sa}: {found} < {required}")]
    InsufficientExceedances {
        sa: usize,
        found: usize,
        required: usize,
    },

    #[error("GPD quantile is unbounded for p = {p} with shape {shape} >= 0")]
    UnboundedQuantile { p: f64, shape: f64 },

    #[error("threshold rescale gives non-positive scale {scale}")]
    InvalidRescale { scale: f64 },

    #[error("calibration set is empty")]
    EmptyCalibration,

    #[error("non-positive SINR {0}")]
    NonPositiveSinr(f64),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("missing or incomplete run: {0}")]
    IncompleteRun(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// Wrap an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// True for errors caused by user input rather than a failing computation.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) | Error::Toml(_) => true,
            Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
