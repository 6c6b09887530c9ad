use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("zero-norm feature vector at row {row}, col {col}")]
    ZeroNorm { row: usize, col: usize },

    #[error("feature vector is not unit norm (norm {0})")]
    NotUnit(f64),

    #[error("bounding box does not intersect the lattice")]
    EmptyIntersection,

    #[error("invalid bounding box: {0}")]
    InvalidBox(String),

    #[error("not enough samples: {samples} for {clusters} clusters")]
    TooFewSamples { samples: usize, clusters: usize },

    #[error("invalid simplex: {0}")]
    InvalidSimplex(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("training stage `{stage}` failed: {source}")]
    Training {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("unreachable occlusion target: wanted {wanted}, achieved {achieved:.3}")]
    UnreachableLevel { wanted: String, achieved: f64 },

    #[error("truncated input: {0}")]
    Truncated(String),

    #[error("malformed record: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable code, used by the CLI error line.
    pub fn code(&self) -> &'static str {
        match self {
            Error::BadMagic { .. } => "E_BAD_MAGIC",
            Error::UnsupportedVersion(_) => "E_VERSION",
            Error::DimensionMismatch(_) => "E_DIMENSION",
            Error::ZeroNorm { .. } => "E_ZERO_NORM",
            Error::NotUnit(_) => "E_NOT_UNIT",
            Error::EmptyIntersection => "E_EMPTY_BOX",
            Error::InvalidBox(_) => "E_INVALID_BOX",
            Error::TooFewSamples { .. } => "E_TOO_FEW_SAMPLES",
            Error::InvalidSimplex(_) => "E_SIMPLEX",
            Error::InvalidParameter(_) => "E_PARAMETER",
            Error::EmptyDataset(_) => "E_EMPTY_DATASET",
            Error::Training { .. } => "E_TRAINING",
            Error::UnreachableLevel { .. } => "E_UNREACHABLE_LEVEL",
            Error::Truncated(_) => "E_TRUNCATED",
            Error::Malformed(_) => "E_MALFORMED",
            Error::Io(_) => "E_IO",
            Error::Json(_) => "E_JSON",
        }
    }

    pub(crate) fn in_stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Training {
            stage,
            source: Box::new(source),
        }
    }
}
