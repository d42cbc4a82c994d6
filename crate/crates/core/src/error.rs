use thiserror::Error;

/// Errors produced by the analytic pipeline, the simulator and the config loader.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config line {line}: {message}")]
    ConfigSyntax { line: usize, message: String },

    #[error("config line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },

    #[error("missing config key `{0}`")]
    MissingKey(String),

    #[error("geometric factor diverges in state {state} (P_ii * exp(s*T) = {factor})")]
    Divergent { state: usize, factor: f64 },

    #[error("tolerance {tol:e} not reached: {detail}")]
    ToleranceNotReached { tol: f64, detail: String },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("system unstable: lambda = {lambda} >= K * mu_K = {capacity}")]
    Unstable { lambda: f64, capacity: f64 },

    #[error("i/o: {0}")]
    Io(String),
}

impl Error {
    /// CLI exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_)
            | Error::ConfigSyntax { .. }
            | Error::UnknownKey { .. }
            | Error::MissingKey(_)
            | Error::Io(_) => 2,
            Error::Divergent { .. } | Error::ToleranceNotReached { .. } | Error::Singular(_) => 3,
            Error::Unstable { .. } => 4,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
