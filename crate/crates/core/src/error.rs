use thiserror::Error;

use crate::sdp::SdpStatus;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid coefficient matrix: {0}")]
    InvalidCoefficients(String),

    #[error("scenario mismatch: expected {expected}, got {got}")]
    ScenarioMismatch { expected: String, got: String },

    #[error("setting index out of range: {0}")]
    SettingOutOfRange(String),

    #[error("invalid behavior: {0}")]
    InvalidBehavior(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("unsupported hierarchy level '{0}'")]
    UnsupportedLevel(String),

    #[error("malformed SDP problem: {0}")]
    MalformedProblem(String),

    /// The solver finished without an optimal point.
    #[error("SDP solve ended with status {status:?}: {detail}")]
    Solver { status: SdpStatus, detail: String },

    #[error("empty probability polytope: {0}")]
    EmptyPolytope(String),

    #[error("ansatz distribution not applicable: {0}")]
    AnsatzInapplicable(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("no matching records: {0}")]
    NoMatchingRecords(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn is_infeasible(&self) -> bool {
        matches!(self, Error::Solver { status: SdpStatus::Infeasible, .. })
    }

    pub(crate) fn solver(status: SdpStatus, detail: impl Into<String>) -> Self {
        Error::Solver { status, detail: detail.into() }
    }
}
