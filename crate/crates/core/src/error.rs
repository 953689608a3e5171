use std::path::PathBuf;

use thiserror::Error;

/// Model capability a backend serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    Extract,
    Likelihood,
    Embed,
    Augment,
    Judge,
}

impl std::fmt::Display for Capability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Capability::Extract => "extract",
            Capability::Likelihood => "likelihood",
            Capability::Embed => "embed",
            Capability::Augment => "augment",
            Capability::Judge => "judge",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    ConfigFields(Vec<String>),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },

    #[error("{capability} backend failed{}: {message}", chunk_suffix(.chunk_id))]
    Backend {
        capability: Capability,
        chunk_id: Option<String>,
        message: String,
    },

    #[error("could not parse {capability} response: {message}")]
    ResponseParse {
        capability: Capability,
        message: String,
        raw: String,
    },

    #[error("{capability} backend does not support {feature}")]
    Unsupported {
        capability: Capability,
        feature: &'static str,
    },

    #[error("embedding dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("no knowledge-graph entities matched QA pair {qa_id}")]
    NoSeeds { qa_id: String },

    #[error(
        "curriculum order violated at stage {stage}: dataset was mined with checkpoint {expected}, \
         current adapter is {found}"
    )]
    CurriculumOrder { stage: u8, expected: String, found: String },

    #[error("{path} missing; run `{producer}` first")]
    MissingArtifact { path: PathBuf, producer: String },
}

fn chunk_suffix(chunk_id: &Option<String>) -> String {
    match chunk_id {
        Some(id) => format!(" for chunk {id}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn backend(capability: Capability, message: impl Into<String>) -> Self {
        Error::Backend {
            capability,
            chunk_id: None,
            message: message.into(),
        }
    }

    /// Attaches a chunk id to backend failures; other errors pass through.
    pub fn for_chunk(self, chunk: &str) -> Self {
        match self {
            Error::Backend {
                capability,
                chunk_id: None,
                message,
            } => Error::Backend {
                capability,
                chunk_id: Some(chunk.to_string()),
                message,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
