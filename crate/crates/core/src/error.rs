use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the simulator and its diagnostics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid initial data: {0}")]
    InvalidProfile(String),

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("degenerate frame point (s = {s})")]
    DegeneratePoint { s: f64 },

    #[error("quasilinear coefficient degenerate at t = {t}: min |1 + A| = {min_coefficient}")]
    DegenerateCoefficient { t: f64, min_coefficient: f64 },

    #[error("non-finite value produced at t = {t}")]
    NonFinite { t: f64 },

    #[error("stencil out of range at t = {t}: need snapshots {needed_lo}..={needed_hi}, history holds {held_lo}..={held_hi}")]
    StencilOutOfRange {
        t: f64,
        needed_lo: i64,
        needed_hi: i64,
        held_lo: i64,
        held_hi: i64,
    },

    #[error("t = {t} is not a snapshot time")]
    NotASnapshotTime { t: f64 },

    #[error("multi-index order {order} exceeds the configured maximum {max}")]
    OrderTooHigh { order: usize, max: usize },

    #[error("unknown vector field identifier `{0}`")]
    UnknownField(String),

    #[error("hyperboloid s = {s} needs history over t in [{t_lo}, {t_hi}], available [{available_lo}, {available_hi}]")]
    Coverage {
        s: f64,
        t_lo: f64,
        t_hi: f64,
        available_lo: f64,
        available_hi: f64,
    },

    #[error("hyperboloid s = {0} is below the initial hyperbolic time 2")]
    SliceTooEarly(f64),

    #[error("fit needs at least {needed} samples in window, found {found}")]
    InsufficientSamples { needed: usize, found: usize },

    #[error("fit input must be positive, found {value} at parameter {param}")]
    NonPositiveValue { param: f64, value: f64 },

    #[error("series `{label}` is not strictly increasing at parameter {param}")]
    NonMonotoneSeries { label: String, param: f64 },

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("csv row {row}: {message}")]
    Schema { row: usize, message: String },

    #[error("run failed at t = {t}: {source}")]
    RunFailed {
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
