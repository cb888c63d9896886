use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("moment sequence is incomplete: missing moment {0}")]
    Incomplete(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("insufficient degree: need moments up to degree {needed}, have {available}")]
    InsufficientDegree { needed: usize, available: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("moment sequence is numerically zero (rank 0)")]
    RankZero,

    #[error("requested rank {rank} exceeds Hankel matrix size {max}")]
    RankTooLarge { rank: usize, max: usize },

    #[error("singular leading singular block (s_r = {0:e})")]
    SingularBlock(f64),

    #[error("combined multiplication matrix is near-defective after {attempts} attempts (min eigengap {gap:e})")]
    NearDefective { attempts: usize, gap: f64 },

    #[error("unstable weight for term {term}: denominator {denominator:e}")]
    UnstableWeight { term: usize, denominator: f64 },

    #[error("{0} did not converge")]
    NonConvergence(&'static str),

    #[error("cannot estimate scale factor: {0}")]
    CannotEstimate(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable identifier used on stderr and in experiment CSV output.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Incomplete(_) => "incomplete",
            Error::Dimension { .. } => "dimension",
            Error::InsufficientDegree { .. } => "insufficient-degree",
            Error::InvalidInput(_) => "invalid-input",
            Error::RankZero => "rank-zero",
            Error::RankTooLarge { .. } => "rank-too-large",
            Error::SingularBlock(_) => "singular-block",
            Error::NearDefective { .. } => "near-defective",
            Error::UnstableWeight { .. } => "unstable-weight",
            Error::NonConvergence(_) => "non-convergence",
            Error::CannotEstimate(_) => "cannot-estimate",
            Error::Io(_) => "io",
        }
    }

    /// Whether the failure comes from the numerical pipeline rather than
    /// from malformed input or the filesystem.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::RankZero
                | Error::RankTooLarge { .. }
                | Error::SingularBlock(_)
                | Error::NearDefective { .. }
                | Error::UnstableWeight { .. }
                | Error::NonConvergence(_)
                | Error::CannotEstimate(_)
        )
    }
}
