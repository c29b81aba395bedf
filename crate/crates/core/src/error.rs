use std::fmt;

/// Errors raised by model construction, analysis and the experiment harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("state error: {0}")]
    State(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("schema version {found} is newer than supported version {supported}")]
    SchemaVersion { found: u32, supported: u32 },
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("stage `{stage}` failed: {inner}")]
    Stage { stage: Stage, inner: Box<Error> },
}

pub type Result<T> = std::result::Result<T, Error>;

/// Pipeline stage tags used to attribute failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Build,
    Diagonalize,
    EthStats,
    InitialState,
    ExactDynamics,
    Ledger,
    WeightTable,
    MasterEquation,
    Compare,
    Persist,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Build => "build",
            Stage::Diagonalize => "diagonalize",
            Stage::EthStats => "eth-stats",
            Stage::InitialState => "initial-state",
            Stage::ExactDynamics => "exact-dynamics",
            Stage::Ledger => "ledger",
            Stage::WeightTable => "weight-table",
            Stage::MasterEquation => "master-equation",
            Stage::Compare => "compare",
            Stage::Persist => "persist",
        };
        f.write_str(s)
    }
}

impl Error {
    pub fn at(self, stage: Stage) -> Error {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage { stage, inner: Box::new(e) },
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Validation(msg.into()))
}
