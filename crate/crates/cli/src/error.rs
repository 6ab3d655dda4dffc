use std::fmt;

use predsafe::classify::ClassifyError;
use predsafe::ingest::CorpusError;
use predsafe::metrics::MetricsError;
use predsafe::synth::SynthError;

/// Failure of one subcommand. The variant fixes the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration. Exit code 1.
    Usage(String),
    /// Inputs that fail to parse or validate. Exit code 2.
    Data(String),
    /// Anything else, including output write failures. Exit code 3.
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
            Self::Internal(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Usage(_) => "usage",
            Self::Data(_) => "data",
            Self::Internal(_) => "internal",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Self::Usage(m) | Self::Data(m) | Self::Internal(m) => m,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error[{}]: {}", self.kind(), self.message())
    }
}

impl std::error::Error for CliError {}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match &e {
            CorpusError::MissingCondition { condition } => {
                let s = flag_suffix(*condition);
                Self::Data(format!(
                    "{e}; pass --preds-{s} or set preds_{s} in the config"
                ))
            }
            _ => Self::Data(e.to_string()),
        }
    }
}

fn flag_suffix(c: predsafe::SemanticCondition) -> &'static str {
    match c {
        predsafe::SemanticCondition::WithMap => "with",
        predsafe::SemanticCondition::WithoutMap => "without",
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<ClassifyError> for CliError {
    fn from(e: ClassifyError) -> Self {
        match e {
            ClassifyError::DuplicateScene(_) | ClassifyError::DegeneratePolyline => {
                Self::Data(e.to_string())
            }
            _ => Self::Usage(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        Self::Usage(e.to_string())
    }
}
