use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("matmul: inner dimensions disagree ({lhs:?} x {rhs:?})")]
    InnerDimension { lhs: Vec<usize>, rhs: Vec<usize> },

    #[error("{op}: invalid axis {axis} for rank {rank}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },

    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { len: usize, shape: Vec<usize> },

    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("{layer}: expected {expected} input channels, got {actual}")]
    ChannelMismatch {
        layer: String,
        expected: usize,
        actual: usize,
    },

    #[error("batchnorm `{layer}` in training mode needs at least 2 values per channel, got {count}")]
    BatchTooSmall { layer: String, count: usize },

    #[error("{0}: batch of at least 2 required")]
    BatchOfOne(&'static str),

    #[error("gradient check: function returned {first} then {second} for the same input")]
    NonDeterministic { first: f64, second: f64 },

    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),

    #[error("parameter `{0}` registered twice")]
    DuplicateParam(String),

    #[error("parameter `{0}` is registered with more than one optimizer")]
    OverlappingParams(String),

    #[error("latent azimuth mode needs an azimuth posterior")]
    MissingPosterior,

    #[error("encoder azimuth mode needs the encoder's azimuth output")]
    MissingEncoderAzimuth,

    #[error("input pixel {value} at flat index {index} is outside [0, 1]")]
    PixelRange { index: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("IDX: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { expected: u32, found: u32 },

    #[error("{what}: truncated payload, expected {expected} bytes but found {actual}")]
    Truncated {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("IDX: image size {rows}x{cols} does not match the model resolution {expected}x{expected}")]
    DimMismatch {
        rows: usize,
        cols: usize,
        expected: usize,
    },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
