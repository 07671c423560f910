use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error at {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("dataset root does not exist: {0}")]
    MissingRoot(PathBuf),
    #[error("degenerate ground truth for sample {0}")]
    DegenerateGroundTruth(String),
    #[error("empty label")]
    EmptyLabel,
    #[error("empty pooling region")]
    EmptyPooling,
    #[error("degenerate crop: box area {0} px")]
    DegenerateCrop(usize),
    #[error("zero vector")]
    ZeroVector,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("part mapping {path}:{line}: {message}")]
    Mapping { path: PathBuf, line: usize, message: String },
    #[error("no part mapping for ({object}, {affordance})")]
    MissingMapping { object: String, affordance: String },
    #[error("backend `{backend}` unavailable: {message}")]
    BackendUnavailable { backend: String, message: String },
    #[error("unknown backend `{0}`")]
    UnknownBackend(String),
    #[error("no exocentric partner for classes {0:?}")]
    MissingPartners(Vec<(String, String)>),
    #[error("missing pseudo labels for samples {0:?}")]
    MissingLabels(Vec<String>),
    #[error("missing ground truth for samples {0:?}")]
    MissingGroundTruth(Vec<String>),
    #[error("refinement scope lists unknown classes {0:?}")]
    UnknownScope(Vec<String>),
    #[error("sample `{0}` not found")]
    UnknownSample(String),
    #[error("index {index} out of range for {what} of size {size}")]
    OutOfRange { what: &'static str, index: usize, size: usize },
    #[error("no grasp candidates")]
    NoCandidates,
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("config hash mismatch: artifact {artifact}, current {current}")]
    ConfigMismatch { artifact: String, current: String },
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid argument: {0}")]
    Invalid(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Whether retrying the same call may succeed.
    pub fn is_retriable(&self) -> bool {
        matches!(self, Error::BackendUnavailable { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
