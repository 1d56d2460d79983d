use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("analytic series only covers static single-line combs: {0}")]
    UnsupportedComb(String),

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("non-finite field sample at index {0}")]
    NonFinite(usize),

    #[error("no echo detected: {0}")]
    NoEcho(String),

    #[error("zero energy: {0}")]
    ZeroEnergy(&'static str),

    #[error("incompatible traces: {0}")]
    IncompatibleTraces(String),

    #[error("convergence study did not converge after {levels} levels (last change {last_change:e})")]
    NotConverged { levels: usize, last_change: f64 },

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
