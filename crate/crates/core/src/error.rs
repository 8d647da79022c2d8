use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Which embedding namespace a key belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingKind {
    Image,
    Label,
}

impl std::fmt::Display for EmbeddingKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EmbeddingKind::Image => f.write_str("image"),
            EmbeddingKind::Label => f.write_str("label"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("no valid image records found in {0}")]
    EmptyDataset(PathBuf),

    #[error("dimension mismatch for {key:?}: expected {expected}, found {found}")]
    DimensionMismatch {
        key: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in vector {key:?}")]
    NonFiniteValue { key: String },

    #[error("duplicate key {key:?}")]
    DuplicateKey { key: String },

    #[error("{path}: manifest declares {expected} bytes of vector data, file holds {actual}")]
    LengthMismatch {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("zero-norm vector for {key:?}")]
    ZeroVector { key: String },

    #[error("image embeddings have dimension {image}, label embeddings have {label}")]
    DimensionConflict { image: usize, label: usize },

    #[error("missing {kind} embedding for {key:?}")]
    MissingEmbedding { kind: EmbeddingKind, key: String },

    #[error("embedding coverage incomplete: {}", describe_missing(.missing_images, .missing_labels))]
    CoverageIncomplete {
        missing_images: Vec<String>,
        missing_labels: Vec<String>,
    },

    #[error("label {label:?} on image {image_id:?} is not mapped to any cluster")]
    UnmappedLabel { image_id: String, label: String },

    #[error("image {0:?} has no candidate labels")]
    EmptyCandidates(String),

    #[error("unknown image {0:?}")]
    UnknownImage(String),

    #[error("unknown label {0:?}")]
    UnknownLabel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

fn describe_missing(images: &[String], labels: &[String]) -> String {
    fn list(kind: &str, items: &[String]) -> Option<String> {
        const SHOWN: usize = 5;
        if items.is_empty() {
            return None;
        }
        let mut s = format!("{} {kind}(s) without vectors: ", items.len());
        let names: Vec<String> = items.iter().take(SHOWN).map(|k| format!("{k:?}")).collect();
        s.push_str(&names.join(", "));
        if items.len() > SHOWN {
            s.push_str(", ...");
        }
        Some(s)
    }
    [list("label", labels), list("image", images)]
        .into_iter()
        .flatten()
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable tag, used in CLI error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
            Error::Csv { .. } => "csv",
            Error::EmptyDataset(_) => "empty_dataset",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NonFiniteValue { .. } => "non_finite_value",
            Error::DuplicateKey { .. } => "duplicate_key",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::ZeroVector { .. } => "zero_vector",
            Error::DimensionConflict { .. } => "dimension_conflict",
            Error::MissingEmbedding { .. } => "missing_embedding",
            Error::CoverageIncomplete { .. } => "coverage_incomplete",
            Error::UnmappedLabel { .. } => "unmapped_label",
            Error::EmptyCandidates(_) => "empty_candidates",
            Error::UnknownImage(_) => "unknown_image",
            Error::UnknownLabel(_) => "unknown_label",
            Error::InvalidConfig(_) => "invalid_config",
        }
    }
}
