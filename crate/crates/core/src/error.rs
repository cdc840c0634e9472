use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("simulation diverged at step {step} (state {value})")]
    SimulationDiverged { step: usize, value: f64 },

    #[error("regularity condition violated: {0}")]
    Condition(String),

    #[error("density {density:e} at y={y} is below the representable range; restrict to the effective support")]
    TailTruncation { y: f64, density: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("need at least {needed} samples for epsilon={epsilon}, have {have}")]
    InsufficientSamples {
        needed: usize,
        have: usize,
        epsilon: f64,
    },

    #[error("statistic kind {statistic} does not match table kind {table}")]
    KindMismatch { statistic: String, table: String },

    #[error("model mismatch: statistic computed for {statistic}, table built for {table}")]
    ModelMismatch { statistic: String, table: String },

    #[error("epsilon {0} is not in the quantile table")]
    UnsupportedEpsilon(f64),

    #[error("unknown model family {0:?}")]
    UnknownModel(String),

    #[error("unsupported file version {0:?}")]
    UnknownVersion(String),

    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input or files).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::SimulationDiverged { .. }
                | Error::Condition(_)
                | Error::TailTruncation { .. }
                | Error::NonFinite(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
