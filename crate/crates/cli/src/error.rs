//! Error taxonomy mapped onto process exit codes: 0 success, 2 config
//! error, 3 data error, 4 numerical divergence, 1 anything else.

use thiserror::Error;
use tscert_core::attacks::AttackError;
use tscert_core::certmath::CertError;
use tscert_core::evalkit::EvalError;
use tscert_core::masks::MaskError;
use tscert_core::nnkit::NnError;
use tscert_core::smoothing::SmoothError;
use tscert_core::tsdata::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Other = 1,
    Config = 2,
    Data = 3,
    Divergence = 4,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical divergence: {0}")]
    Divergence(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::Config,
            CliError::Data(_) => ExitCode::Data,
            CliError::Divergence(_) => ExitCode::Divergence,
            CliError::Other(_) => ExitCode::Other,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::InvalidArg(_) | DataError::InvalidLength { .. } => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Divergence { .. } => CliError::Divergence(e.to_string()),
            NnError::Config(_) => CliError::Config(e.to_string()),
            NnError::CheckpointIo(_) | NnError::CheckpointFormat(_) => CliError::Data(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<SmoothError> for CliError {
    fn from(e: SmoothError) -> Self {
        match e {
            SmoothError::Nn(inner) => inner.into(),
            SmoothError::Config(_) | SmoothError::Mismatch(_) => CliError::Config(e.to_string()),
            SmoothError::EmptyTrainSet => CliError::Data(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Smooth(inner) => inner.into(),
            EvalError::Nn(inner) => inner.into(),
            EvalError::Config(_) | EvalError::UnsortedGrid => CliError::Config(e.to_string()),
            EvalError::Empty => CliError::Data(e.to_string()),
            EvalError::Cert(inner) => CliError::Other(inner.to_string()),
        }
    }
}

impl From<AttackError> for CliError {
    fn from(e: AttackError) -> Self {
        match e {
            AttackError::NonFiniteGradient { .. } => CliError::Divergence(e.to_string()),
            AttackError::Config(_) => CliError::Config(e.to_string()),
            AttackError::Smooth(inner) => inner.into(),
            AttackError::Nn(inner) => inner.into(),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<CertError> for CliError {
    fn from(e: CertError) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<MaskError> for CliError {
    fn from(e: MaskError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
