use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the inpainting pipeline and its file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    Shape {
        context: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("timestep {t} out of range 0..={max}")]
    Timestep { t: usize, max: usize },
    #[error("singular schedule: alpha_{t} is zero")]
    SingularSchedule { t: usize },
    #[error("sigma_{t}^2 = {sigma_sq} exceeds 1 - alpha_prev = {limit}")]
    InvalidSigma { t: usize, sigma_sq: f64, limit: f64 },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("missing flow for frame pair {from} -> {to}: {path}")]
    MissingFlow { from: usize, to: usize, path: PathBuf },
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(context: &'static str, expected: &[usize], found: &[usize]) -> Self {
        Error::Shape {
            context,
            expected: expected.to_vec(),
            found: found.to_vec(),
        }
    }

    pub(crate) fn parse(offset: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: message.into(),
        }
    }

    /// Process exit code used by the command line front end.
    ///
    /// 1 = usage/configuration, 2 = I/O or file format, 3 = numeric or contract violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 1,
            Error::Io(_) | Error::Json(_) | Error::Parse { .. } | Error::MissingFlow { .. } => 2,
            _ => 3,
        }
    }
}
