use std::io;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] demerge_core::Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error("{0}")]
    Integrity(String),
    #[error("{0}")]
    Evaluator(String),
}

impl Error {
    pub fn format(msg: impl Into<String>) -> Self {
        Error::Core(demerge_core::Error::Format(msg.into()))
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Core(demerge_core::Error::Config(msg.into()))
    }

    pub fn io(context: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Core(e) => e.kind(),
            Error::Io { .. } => "IoError",
            Error::Integrity(_) => "IntegrityError",
            Error::Evaluator(_) => "EvaluatorError",
        }
    }

    /// Process exit code: 2 usage/config, 3 data or format, 4 evaluator.
    pub fn exit_code(&self) -> i32 {
        use demerge_core::Error as C;
        match self {
            Error::Core(C::Config(_)) => 2,
            Error::Core(C::Evaluation(_) | C::SearchFailed(_)) | Error::Evaluator(_) => 4,
            _ => 3,
        }
    }

    pub fn is_format(&self) -> bool {
        matches!(self, Error::Core(demerge_core::Error::Format(_)))
    }
}

pub(crate) trait IoContext<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T>;
}

impl<T> IoContext<T> for io::Result<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| Error::io(what(), e))
    }
}
