use std::fmt;
use std::process::ExitCode;

/// Failures split by exit code: input validation (2) versus runtime (1).
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Input(_) => ExitCode::from(2),
            CliError::Runtime(_) => ExitCode::from(1),
        }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "{}", m),
            CliError::Runtime(m) => write!(f, "{}", m),
        }
    }
}

impl From<medmamba_pipeline::PipelineError> for CliError {
    fn from(e: medmamba_pipeline::PipelineError) -> Self {
        use medmamba_pipeline::PipelineError as P;
        match e {
            P::Input(_) | P::Dimension(_) => CliError::Input(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<medmamba_metrics::MetricsError> for CliError {
    fn from(e: medmamba_metrics::MetricsError) -> Self {
        use medmamba_metrics::MetricsError as M;
        match e {
            M::Input(_) | M::UnknownLabel { .. } | M::Empty => CliError::Input(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<medmamba_core::Error> for CliError {
    fn from(e: medmamba_core::Error) -> Self {
        use medmamba_core::Error as C;
        match e {
            C::Config(_) | C::Dimension { .. } | C::ShapeMismatch { .. } => {
                CliError::Input(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Input(format!("config parse error: {}", e))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
