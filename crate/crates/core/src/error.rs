use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cell id depth {0} exceeds the supported maximum of 63")]
    DepthOverflow(usize),

    #[error("invalid cell id {0:?}: only '0' and '1' digits are allowed")]
    InvalidCellId(String),

    #[error("cell {0} is present but its mother is not (tree is not prefix-closed)")]
    NotPrefixClosed(String),

    #[error("cell {0} appears more than once")]
    DuplicateCell(String),

    #[error("cell {cell} has a non-finite value {value}")]
    NonFiniteValue { cell: String, value: f64 },

    #[error("cell {0} is not alive in the tree")]
    AbsentCell(String),

    #[error("invalid parameter `{key}`: {reason}")]
    InvalidParameter { key: &'static str, reason: String },

    #[error("process is not supercritical (m = {0}); asymptotic routines need m > 1")]
    Subcritical(f64),

    #[error("polynomial degree {degree} exceeds the allowed maximum {max}")]
    DegreeOverflow { degree: u32, max: u32 },

    #[error("cannot parse polynomial term {term:?}: {reason}")]
    PolyParse { term: String, reason: String },

    #[error("stationary law is degenerate: {0}")]
    Degenerate(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("empty tree")]
    EmptyTree,

    #[error("t = {0} lies outside [0, 1]")]
    TimeOutOfRange(f64),

    #[error("every replicate went extinct; survival-conditioned statistics are undefined")]
    AllExtinct,

    #[error("line {line}: {reason}")]
    Format { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
