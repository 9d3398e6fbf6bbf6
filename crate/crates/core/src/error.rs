use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Library-wide error type.
///
/// Variants are grouped so that callers (in particular the CLI) can map a
/// failure onto one of three classes: configuration problems, data problems,
/// and numeric problems. See [`Error::class`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("template syntax error at byte {position}: {message}")]
    TemplateSyntax { position: usize, message: String },

    #[error("{path}:{line}: {message}")]
    TemplateLoad {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: {message}")]
    VerbalizerLoad {
        path: String,
        line: usize,
        message: String,
    },

    #[error("verbalizer: {0}")]
    Verbalizer(String),

    #[error("token id {token} outside vocabulary of size {vocab_size}")]
    Vocabulary { token: u32, vocab_size: usize },

    #[error("{path}:{line}: {message}")]
    DataLoad {
        path: String,
        line: usize,
        message: String,
    },

    #[error("label {label:?} has only {available} examples but k={k} needs {needed} (train + dev)")]
    Capacity {
        label: String,
        available: usize,
        needed: usize,
        k: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in {context}: {detail}")]
    NonFinite { context: String, detail: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse failure class, used for CLI exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::TemplateSyntax { .. }
            | Error::TemplateLoad { .. }
            | Error::VerbalizerLoad { .. }
            | Error::Verbalizer(_)
            | Error::Config(_) => ErrorClass::Config,
            Error::DataLoad { .. } | Error::Capacity { .. } | Error::Io(_) | Error::Json(_) => {
                ErrorClass::Data
            }
            Error::Vocabulary { .. } | Error::Contract(_) | Error::NonFinite { .. } => {
                ErrorClass::Numeric
            }
        }
    }
}
