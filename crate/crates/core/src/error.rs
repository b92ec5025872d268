use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: malformed record: {reason}")]
    MalformedRecord { path: PathBuf, line: usize, reason: String },

    #[error("unknown label `{label}`{}", location(.path, .line))]
    UnknownLabel {
        label: String,
        path: Option<PathBuf>,
        line: Option<usize>,
    },

    #[error("duplicate id `{id}`{}", location(.path, .line))]
    DuplicateId {
        id: String,
        path: Option<PathBuf>,
        line: Option<usize>,
    },

    #[error("invalid synthetic corpus spec: {0}")]
    InvalidSpec(String),

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("label set is empty")]
    EmptyLabelSet,

    #[error("label `{0}` has an empty descriptor")]
    EmptyDescriptor(String),

    #[error("encoder input is empty")]
    EmptyInput,

    #[error("encoder vocabulary is empty")]
    EmptyVocab,

    #[error("document ids do not line up: {0}")]
    MismatchedIds(String),

    #[error("node index {index} out of range for graph with {len} nodes")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite activation in {0}")]
    NonFiniteActivation(&'static str),

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("backward called before any forward pass was recorded")]
    NoForwardState,

    #[error("cosine similarity undefined for a zero vector")]
    ZeroVector,

    #[error("document has no positive labels")]
    EmptyPositives,

    #[error("document has no negatives")]
    EmptyNegatives,

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("invalid decision policy: {0}")]
    InvalidPolicy(String),

    #[error("no label has both positive and negative instances")]
    NoValidLabels,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown {kind} `{name}` (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("missing index artifact {0}")]
    MissingIndex(PathBuf),

    #[error("artifact {path} was built for fingerprint {found}, expected {expected}")]
    FingerprintMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("unsupported format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn location(path: &Option<PathBuf>, line: &Option<usize>) -> String {
    match (path, line) {
        (Some(p), Some(l)) => format!(" at {}:{}", p.display(), l),
        (Some(p), None) => format!(" in {}", p.display()),
        _ => String::new(),
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 usage/config, 2 data validation, 3 runtime/numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::UnknownStrategy { .. } | Error::InvalidParameter(_) | Error::InvalidPolicy(_) => {
                1
            }
            Error::MalformedRecord { .. }
            | Error::UnknownLabel { .. }
            | Error::DuplicateId { .. }
            | Error::InvalidSpec(_)
            | Error::EmptyTrainingSet
            | Error::EmptyLabelSet
            | Error::EmptyDescriptor(_)
            | Error::EmptyVocab
            | Error::MismatchedIds(_)
            | Error::FingerprintMismatch { .. }
            | Error::Format { .. }
            | Error::MissingIndex(_) => 2,
            _ => 3,
        }
    }
}
