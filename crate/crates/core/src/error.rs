use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("pilot length {t_slots} is shorter than the array size {n_tx}; the LFM rows would not be orthogonal")]
    PilotTooShort { n_tx: usize, t_slots: usize },

    #[error("MUSIC needs a noise subspace: {sources} sources with only {dimension} channels")]
    NoNoiseSubspace { sources: usize, dimension: usize },

    #[error("MUSIC found {found} distinct peaks but {wanted} were requested (degenerate scene)")]
    InsufficientPeaks { found: usize, wanted: usize },

    #[error("APES needs at least {needed} snapshots, only {available} available")]
    InsufficientSnapshots { needed: usize, available: usize },

    #[error("matrix `{0}` is rank deficient")]
    RankDeficient(&'static str),

    #[error("steering angles {0:.3} deg and {1:.3} deg collide; the Gram matrix is singular")]
    CollidingAngles(f64, f64),

    #[error("matrix `{0}` is not positive definite")]
    NotPositiveDefinite(&'static str),

    #[error("reference value is zero; normalized error undefined")]
    ZeroReference,

    #[error("scene file: {0}")]
    SceneFile(String),

    #[error("{experiment}: {failed} of {total} trials failed at one sweep point")]
    TooManyFailures { experiment: String, failed: usize, total: usize },

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dims(
    context: &'static str,
    expected: (usize, usize),
    actual: (usize, usize),
) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected: format!("{}x{}", expected.0, expected.1),
            actual: format!("{}x{}", actual.0, actual.1),
        })
    }
}
