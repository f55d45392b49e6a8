use superot_core::data::DataError;
use superot_core::evalstats::EvalError;
use superot_core::nets::NetError;
use superot_core::pipeline::PipelineError;
use superot_core::preprocess::PreprocessError;
use superot_core::sinkhorn::SinkhornError;
use thiserror::Error;

/// Command failures, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// bad arguments or configuration
    #[error("{0}")]
    Usage(String),
    /// unreadable, malformed or mismatched inputs
    #[error("{0}")]
    Data(String),
    /// solver or training failure
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<PreprocessError> for CliError {
    fn from(e: PreprocessError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        match e {
            NetError::Config(m) => CliError::Usage(m),
            NetError::Format(m) | NetError::Io(m) => CliError::Data(m),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<SinkhornError> for CliError {
    fn from(e: SinkhornError) -> Self {
        match e {
            SinkhornError::Io(m) => CliError::Data(m),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io(m) => CliError::Data(m),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Data(e) => e.into(),
            PipelineError::Preprocess(e) => e.into(),
            PipelineError::Net(e) => e.into(),
            PipelineError::Sinkhorn(e) => e.into(),
            PipelineError::Eval(e) => e.into(),
        }
    }
}
