use thiserror::Error;

use emitterlab::timetags::TagError;

/// Failure of a command, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("stage {stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<CliError>,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) | CliError::Format(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Stage { source, .. } => source.exit_code(),
        }
    }

    pub fn at(self, stage: impl Into<String>) -> Self {
        CliError::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}

impl From<emitterlab::Error> for CliError {
    fn from(e: emitterlab::Error) -> Self {
        use emitterlab::Error as E;
        match e {
            E::Tags(t) => t.into(),
            E::Format(m) => CliError::Format(m),
            E::Invalid(m) => CliError::Config(m),
            E::Model(m) => CliError::Numerical(m.to_string()),
            E::Fit(f) => CliError::Numerical(f.to_string()),
        }
    }
}

impl From<TagError> for CliError {
    fn from(e: TagError) -> Self {
        match e {
            TagError::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Format(other.to_string()),
        }
    }
}

impl From<emitterlab::inference::FitError> for CliError {
    fn from(e: emitterlab::inference::FitError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
