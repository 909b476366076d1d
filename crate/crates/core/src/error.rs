use std::path::PathBuf;

use thiserror::Error;

use crate::model::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical blowup at time index {index}: {what} is not finite")]
    NumericalBlowup { index: usize, what: &'static str },

    #[error("empty row: multiplier requested for mass {0}")]
    EmptyRow(f64),

    #[error("trip {index} has no arrival time")]
    UnfinishedTrip { index: usize },

    #[error("baseline pattern is infeasible for the scenario demand")]
    InfeasibleBaseline,

    #[error("config error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config {
        message: String,
        line: Option<usize>,
    },

    #[error("scenario failed validation: {}", format_violations(.0))]
    Validation(Vec<Violation>),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::Domain(_) => "domain_error",
            Error::NumericalBlowup { .. } => "numerical_blowup",
            Error::EmptyRow(_) => "empty_row",
            Error::InfeasibleBaseline => "infeasible_baseline",
            Error::UnfinishedTrip { .. } => "unfinished_trip",
            Error::Config { .. } => "config_error",
            Error::Validation(_) => "validation_error",
            Error::Io { .. } => "io_error",
        }
    }

    pub(crate) fn config(message: impl Into<String>) -> Self {
        Error::Config {
            message: message.into(),
            line: None,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| format!("{} ({})", x.code, x.message))
        .collect::<Vec<_>>()
        .join("; ")
}
