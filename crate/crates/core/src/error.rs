use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("window out of bounds for channel `{channel}`: {detail}")]
    OutOfBounds { channel: String, detail: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("flow direction cycle through cell (row {row}, col {col})")]
    Cycle { row: usize, col: usize },

    #[error("no sample points inside the patch")]
    NoSamples,

    #[error("noise weights must be nonnegative and sum to 1, got {0:?}")]
    Weights([f64; 4]),

    #[error("singular kriging system ({0}); add a nugget or jitter duplicate points")]
    Singular(String),

    #[error("HRU table has no entry for {0}")]
    HruMissing(String),

    #[error("non-finite gradient in tensor `{0}`")]
    NonFinite(String),

    #[error("loss is NaN at step {0}")]
    NanLoss(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("cannot split samples: {0}")]
    Split(String),

    #[error("samples on non-water or unpredicted cells: {0}")]
    OffWater(OffenderList),
}

impl Error {
    /// True for errors that originate in the filesystem rather than in the data.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io(_) => true,
            Error::Csv(e) => e.is_io_error(),
            _ => false,
        }
    }
}

/// Sample ids that failed a placement check.
#[derive(Debug, Clone, PartialEq)]
pub struct OffenderList(pub Vec<String>);

impl fmt::Display for OffenderList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.join(", "))
    }
}
