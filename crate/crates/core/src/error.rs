use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
///
/// Variants are grouped by the exit class the CLI maps them to: data problems
/// ([`Error::is_data`]) versus runtime failures such as divergence.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid document {document_id}: {}", violations.join("; "))]
    InvalidDocument {
        document_id: String,
        violations: Vec<String>,
    },

    #[error("unknown object_id {0}")]
    UnknownEntity(u32),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("pdf: {0}")]
    Pdf(String),

    #[error("pdf has no text layer")]
    NoTextLayer,

    #[error("xml: {0}")]
    Xml(String),

    #[error("csv row {row}: {message}")]
    Csv { row: usize, message: String },

    #[error("schema violation at {path}: {message}")]
    Schema { path: String, message: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("generator: {0}")]
    Generator(String),

    #[error("encoder: {0}")]
    Encoder(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}, step {step}: {reason}")]
    Divergence {
        epoch: usize,
        step: usize,
        reason: String,
    },

    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input data rather than a runtime fault.
    pub fn is_data(&self) -> bool {
        !matches!(
            self,
            Error::Divergence { .. } | Error::Generator(_) | Error::Encoder(_) | Error::Io { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
