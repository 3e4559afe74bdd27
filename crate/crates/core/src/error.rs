use thiserror::Error;

/// Errors raised by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("tape does not match parameters: {0}")]
    StaleTape(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    /// A failure inside the training loop, with enough context to replay it.
    #[error("training failed at step {step} (seed {seed}, config {config}): {source}")]
    Run {
        step: u64,
        seed: u64,
        config: String,
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Whether the error stems from invalid user input rather than a
    /// failure while running.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Run { source, .. } => source.is_config(),
            _ => false,
        }
    }

    pub(crate) fn shape(
        context: &'static str,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        Error::Shape {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
