use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("graph is disconnected")]
    Disconnected,

    #[error("graph is disconnected after {attempts} sampling attempts")]
    DisconnectedAfterResample { attempts: usize },

    #[error("graph is not regular (degrees range {min}..={max})")]
    NotRegular { min: usize, max: usize },

    #[error("eigensolver did not converge within {max_iter} iterations")]
    NotConverged { max_iter: usize },

    #[error("theta {0} is outside [0, 1)")]
    ThetaOutOfRange(f64),

    #[error("mixing matrix axiom violated: {0}")]
    MixingAxiom(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite parameters at round {round}, local step {step}, node {node}")]
    NonFinite {
        round: usize,
        step: usize,
        node: usize,
    },

    #[error("all nodes failed in round {0}")]
    AllNodesFailed(usize),

    #[error("objective is not a classifier")]
    NotAClassifier,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("bad IDX magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { found: u32, expected: u32 },

    #[error("truncated IDX file: {0}")]
    Truncated(String),

    #[error("record count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("class {0} has no rows")]
    EmptyClass(usize),

    #[error("step size guard violated: {0}")]
    StepSizeGuard(String),

    #[error("gamma(K, eta) = {0} is not positive")]
    GammaNonPositive(f64),

    #[error("duplicate overlay node id {0}")]
    DuplicateNode(u64),

    #[error("unknown overlay node id {0}")]
    UnknownNode(u64),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by the user's input rather than by numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Json(_)
                | Error::Parse { .. }
                | Error::InvalidArgument(_)
                | Error::ThetaOutOfRange(_)
        )
    }
}
