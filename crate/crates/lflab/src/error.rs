//! Error type shared by every module.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("axis {axis} out of range for dimension {dim}")]
    AxisOutOfRange { axis: usize, dim: usize },

    #[error("field defined on a different grid: {0}")]
    GridMismatch(String),

    #[error("non-finite value in {what} at node {node}")]
    NonFinite { what: &'static str, node: usize },

    #[error("metric not positive definite at node {node}: min eigenvalue {eigenvalue:e} below floor {floor:e}")]
    NotSpd {
        node: usize,
        eigenvalue: f64,
        floor: f64,
    },

    #[error("metric degenerated at t = {t}: node {node}, min eigenvalue {eigenvalue:e}")]
    Degenerate { node: usize, eigenvalue: f64, t: f64 },

    #[error("step limit {0} exceeded before reaching t_end")]
    StepLimit(usize),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("scenario `{name}` requires dimension {expected}, grid has dimension {actual}")]
    ScenarioDim {
        name: String,
        expected: usize,
        actual: usize,
    },

    #[error("initial metric SPD margin {margin:e} below required {required:e} at node {node}")]
    SpdMargin {
        node: usize,
        margin: f64,
        required: f64,
    },

    #[error("config: unknown key `{0}`")]
    UnknownKey(String),

    #[error("config: missing required key `{0}`")]
    MissingKey(&'static str),

    #[error("config: duplicate key `{0}`")]
    DuplicateKey(String),

    #[error("config: bad value for `{key}`: {msg}")]
    BadValue { key: String, msg: String },

    #[error("checkpoint format: {0}")]
    CheckpointFormat(String),

    #[error("records csv format: {0}")]
    CsvFormat(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
