use thiserror::Error;

/// Errors raised by the label-cleaning library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("scene has no points")]
    EmptyScene,
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("k = {k} exceeds point count {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("scene has no labels")]
    MissingLabels,
    #[error("scene has no instance ids")]
    MissingInstances,
    #[error("label {label} out of range for {class_count} classes")]
    LabelOutOfRange { label: u32, class_count: usize },
    #[error("class {0} appears in more than one noise pair")]
    OverlappingPairs(u32),
    #[error("infeasible noise setting: implied unpaired flip rate {rate:.4} is outside [0, 1]")]
    InfeasibleRate { rate: f64 },
    #[error("no label boundary found ({0})")]
    NoBoundary(String),
    #[error("cluster id {id} out of range ({count} clusters)")]
    UnknownCluster { id: usize, count: usize },
    #[error("point {0} has an empty prediction history")]
    EmptyHistory(usize),
    #[error("cluster {0} has no reliable member")]
    NoReliableMember(usize),
    #[error("boundary band is stale: extracted at epoch {band}, labels are at epoch {labels}")]
    StaleBand { band: u64, labels: u64 },
    #[error("unknown pipeline `{0}`")]
    UnknownPipeline(String),
    #[error("infeasible synthetic layout: {0}")]
    InfeasibleLayout(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for failures of the file system rather than of the inputs.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::LengthMismatch { expected, actual });
    }
    Ok(())
}
