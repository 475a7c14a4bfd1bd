use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("quaternion norm {0:e} is too small to normalize")]
    ZeroQuaternion(f64),
    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),
    #[error("invalid motion clip: {0}")]
    InvalidMotion(String),
    #[error("clip references skeleton '{found}' but '{expected}' was expected")]
    SkeletonMismatch { expected: String, found: String },
    #[error("skeleton has no end effectors")]
    EmptyEndEffectorSet,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("kernel width must be odd, got {0}")]
    InvalidKernel(usize),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("adjacency does not match layer: {0}")]
    AdjacencyMismatch(String),
    #[error("pooling map is incomplete: {0}")]
    IncompleteMap(String),
    #[error("clip has {found} frames but the model window is {expected}")]
    WindowLengthMismatch { expected: usize, found: usize },
    #[error("skeletons are not topologically compatible: {0}")]
    TopologyMismatch(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("limits do not match skeleton: {0}")]
    LimitsMismatch(String),
    #[error("sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("discount must lie in [0, 1), got {0}")]
    InvalidGamma(f64),
    #[error("need at least {needed} frames, got {found}")]
    TooShort { needed: usize, found: usize },
    #[error("zero variance in correlation input {0}")]
    ZeroVariance(usize),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u64),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
