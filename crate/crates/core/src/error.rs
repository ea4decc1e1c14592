use std::time::Duration;

use crate::mdp::{ActionIndex, StateId};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("input too short: need at least {needed} samples, got {got}")]
    InputTooShort { needed: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate correlation scaling: {0}")]
    DegenerateScaling(String),

    #[error("cannot fit scaling line: {0}")]
    FitImpossible(String),

    #[error("no observed transitions for state {state} under action {action}")]
    MissingData { state: StateId, action: ActionIndex },

    #[error("value iteration did not converge within {0} iterations")]
    ConvergenceFailure(usize),

    #[error("Lorenz system has no left fixed point for r = {0} (need r > 1, b > 0)")]
    NoLeftFixedPoint(f64),

    #[error("plant diverged at tick {tick}")]
    Divergence { tick: u64 },

    #[error("protocol error: {message} (line: {line:?})")]
    Protocol { message: String, line: String },

    #[error("no reply from plant within {0:?}")]
    Timeout(Duration),

    #[error("plant session ended")]
    SessionEnded,

    #[error("performance indicator undefined: J_null equals J_oracle")]
    UndefinedIndicator,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported model document format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },

    #[error("malformed model document: {0}")]
    Document(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures that originate in the plant (or its transport).
    pub fn is_plant_error(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. }
                | Error::Protocol { .. }
                | Error::Timeout(_)
                | Error::SessionEnded
                | Error::Io(_)
        )
    }
}
