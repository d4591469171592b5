use soundcot::bench::BenchError;
use soundcot::dataset::DatasetError;
use soundcot::eval::EvalError;
use soundcot::gateway::GatewayError;
use soundcot::pipelines::PipelineError;
use soundcot::taxonomy::TaxonomyError;
use thiserror::Error;

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    Usage = 1,
    Data = 2,
    Backend = 3,
}

#[derive(Debug, Error)]
#[error("{message}")]
pub struct CliError {
    pub exit: Exit,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            exit: Exit::Usage,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            exit: Exit::Data,
            message: message.into(),
        }
    }

    pub fn backend(message: impl Into<String>) -> Self {
        Self {
            exit: Exit::Backend,
            message: message.into(),
        }
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::Config(_) | GatewayError::NotConfigured(_) => CliError::usage(e.to_string()),
            GatewayError::InvalidAudio { .. } | GatewayError::InvalidRequest(_) => CliError::data(e.to_string()),
            _ => CliError::backend(e.to_string()),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Gateway(g) => g.into(),
            other => CliError::data(other.to_string()),
        }
    }
}

impl From<TaxonomyError> for CliError {
    fn from(e: TaxonomyError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Config(_) => CliError::usage(e.to_string()),
            other => CliError::data(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::data(e.to_string())
    }
}
