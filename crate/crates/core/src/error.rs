use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("variable ({site}, {setting}) out of bounds")]
    OutOfBounds { site: usize, setting: usize },
    #[error("variable ({site}, {setting}) repeated in one feature")]
    DuplicateVariable { site: usize, setting: usize },
    #[error("empty feature")]
    EmptyFeature,
    #[error("dataset failed validation: {0:?}")]
    Validation(Vec<crate::dataset::ValidationError>),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("{variables} variables exceed the enumeration cap of {cap}")]
    TooLarge { variables: usize, cap: usize },
    #[error("input must be strictly positive, got {0}")]
    NonPositiveInput(f64),
    #[error("window of {window} needs at least that many records, trace has {available}")]
    WindowTooShort { window: usize, available: usize },
    #[error("no clean rational pattern; normalized vector {raw:?}")]
    NoCleanPattern { raw: Vec<f64> },
    #[error("inequality is not symmetric under site permutations: {0}")]
    NotSymmetric(String),
    #[error("symmetric bound not certifiable: {0}")]
    NotCertifiable(String),
    #[error("feature {0} missing from dataset")]
    MissingFeature(String),
    #[error("singular angle θ = {theta}")]
    SingularAngle {
        theta: f64,
        limit: Box<crate::pbc::AngleFunctions>,
    },
    #[error("variance must be non-negative, got {0}")]
    NegativeVariance(f64),
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("scenario mismatch: {0}")]
    ScenarioMismatch(String),
    #[error("eigensolver did not converge: {0}")]
    NonConvergence(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("format error: {0}")]
    Format(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
