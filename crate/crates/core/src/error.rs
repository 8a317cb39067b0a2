use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("degenerate batch: batch norm in train mode needs at least 2 rows, got {0}")]
    DegenerateBatch(usize),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("unknown word `{0}`")]
    MissingWord(String),

    #[error("unknown category `{0}`")]
    MissingCategory(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("invalid world spec: {0}")]
    Spec(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("non-finite loss at step {step}: {dump}")]
    NonFiniteLoss { step: usize, dump: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn parse(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
