use std::fmt;

use thiserror::Error;

/// A configuration value outside its allowed range.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid configuration `{field}`: {reason}")]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// How a backend failure should be treated by the retry loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    /// Transport errors, timeouts, 429 and 5xx responses.
    Transient,
    /// Anything a retry cannot fix (4xx, malformed payloads, missing fixtures).
    Permanent,
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FailureKind::Transient => f.write_str("transient"),
            FailureKind::Permanent => f.write_str("permanent"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("{kind} backend failure: {message}")]
    Call { kind: FailureKind, message: String },
    #[error("backend failed after {attempts} attempt(s): {last}")]
    Exhausted { attempts: u32, last: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

impl BackendError {
    pub fn transient(message: impl Into<String>) -> Self {
        BackendError::Call {
            kind: FailureKind::Transient,
            message: message.into(),
        }
    }

    pub fn permanent(message: impl Into<String>) -> Self {
        BackendError::Call {
            kind: FailureKind::Permanent,
            message: message.into(),
        }
    }

    pub fn is_transient(&self) -> bool {
        matches!(
            self,
            BackendError::Call {
                kind: FailureKind::Transient,
                ..
            }
        )
    }
}

#[derive(Debug, Error)]
pub enum ExtractionError {
    /// The extractor returned nothing at all. Distinct from a completion that
    /// says there is no verifiable claim.
    #[error("extractor returned an empty completion")]
    EmptyOutput,
}

#[derive(Debug, Error)]
pub enum VerificationError {
    #[error("no verification label found in verifier output")]
    NoLabel,
    #[error("gated claim with non-definite pre-verification label `{0}`")]
    InvariantViolation(String),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error(transparent)]
    Verification(#[from] VerificationError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed json in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("duplicate response id `{0}` in input")]
    DuplicateId(String),
    #[error("run directory belongs to a different run: {0}")]
    RunMismatch(String),
    #[error("run interrupted after {0} response(s)")]
    Interrupted(usize),
}

impl PipelineError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn json(path: impl AsRef<std::path::Path>, source: serde_json::Error) -> Self {
        PipelineError::Json {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
