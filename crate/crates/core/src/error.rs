use crate::model::NeuronId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid property: {0}")]
    InvalidProperty(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("classification is ambiguous at the reference point (argmax tie)")]
    ArgmaxTie,

    #[error("{0} is not the pre-activation neuron of a ReLU layer")]
    InvalidAssertion(NeuronId),

    #[error("pivot coefficient {coeff:e} for {entering} in the row of {leaving} is below tolerance")]
    PivotTooSmall {
        leaving: NeuronId,
        entering: NeuronId,
        coeff: f64,
    },

    #[error("{0} cannot be brought into the basis")]
    Singular(NeuronId),

    #[error("network shape {found:?} does not match proof tree shape {expected:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("unsupported proof tree version {0}")]
    UnsupportedVersion(u32),

    #[error("malformed proof tree: {0}")]
    TreeFormat(String),

    #[error("{count} ReLU neurons exceed the enumeration limit of {max}")]
    TooManyRelus { count: usize, max: usize },

    #[error("internal solver error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
