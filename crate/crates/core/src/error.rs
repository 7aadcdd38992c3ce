use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("operator is not Hermitian (max |A - A†| = {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("{what} not PSD: minimum eigenvalue {min_eigenvalue:e}")]
    NotPositive { what: &'static str, min_eigenvalue: f64 },

    #[error("density operator trace is {trace}, expected 1")]
    BadTrace { trace: f64 },

    #[error("rate inequality violated: gamma_xy^2 = {:e} > gamma_x * gamma_y = {:e}", gamma_xy * gamma_xy, gamma_x * gamma_y)]
    RateInequality {
        gamma_x: f64,
        gamma_y: f64,
        gamma_xy: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid scenario field `{field}`: {message}")]
    Scenario { field: String, message: String },

    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
