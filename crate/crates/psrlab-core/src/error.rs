use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("history is unreachable: one-step normalizer {normalizer:e} at step {step}")]
    UnreachableHistory { step: usize, normalizer: f64 },

    #[error("model parameters are invalid: {0}")]
    InvalidModel(String),

    #[error("enumeration budget exceeded: needed {needed} items, cap is {cap} (set PSRLAB_BUDGET to raise)")]
    BudgetExceeded { needed: usize, cap: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("not weakly revealing: sigma_min({sigma:e}) <= tol at step {step}")]
    NotWeaklyRevealing { step: usize, sigma: f64 },

    #[error("POMDP is not {m}-step decodable: window {window:?} maps to states {s1} and {s2}")]
    NotDecodable { m: usize, window: Vec<usize>, s1: usize, s2: usize },

    #[error("lock parameter alpha={0} outside (0, 1/(2*sqrt(2)))")]
    InvalidAlpha(f64),

    #[error("generation failed after {retries} retries: {reason}")]
    GenerationFailed { retries: usize, reason: String },

    #[error("no size-{rank} history subset achieves full rank at step {step}")]
    RankDeficientPool { step: usize, rank: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 parse/config, 3 budget, 4 invalid model.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse(_) => 2,
            Error::BudgetExceeded { .. } => 3,
            Error::InvalidModel(_) | Error::InvalidAlpha(_) => 4,
            _ => 1,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
