use thiserror::Error;

use crate::data::Violation;

pub type Result<T, E = MedError> = std::result::Result<T, E>;

/// Coarse classification used to map failures onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum MedError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("invalid dataset: {}", format_violations(.0))]
    InvalidDataset(Vec<Violation>),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("empty smoothing window at (t1, t2) = ({t1}, {t2}) after bandwidth expansion")]
    DegenerateWindow { t1: f64, t2: f64 },

    #[error("grid point {index}: {source}")]
    AtGridPoint {
        index: usize,
        #[source]
        source: Box<MedError>,
    },

    #[error("permutation replicate {index}: {source}")]
    Replicate {
        index: usize,
        #[source]
        source: Box<MedError>,
    },

    #[error("Monte Carlo replication {index}: {source}")]
    Replication {
        index: usize,
        #[source]
        source: Box<MedError>,
    },

    #[error("fewer than two subjects have two or more observations; within-subject pairs are required")]
    InsufficientPairs,

    #[error("curves are not on a shared grid: {0}")]
    GridMismatch(String),

    #[error("negative variance {value} at t = {t}")]
    NegativeVariance { t: f64, value: f64 },

    #[error("report does not retain smoothed curves")]
    NoCurves,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl MedError {
    pub fn class(&self) -> ErrorClass {
        match self {
            MedError::InvalidConfig(_) => ErrorClass::Usage,
            MedError::DegenerateWindow { .. }
            | MedError::NegativeVariance { .. }
            | MedError::InsufficientPairs => ErrorClass::Numerical,
            MedError::AtGridPoint { source, .. }
            | MedError::Replicate { source, .. }
            | MedError::Replication { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn at_grid_point(self, index: usize) -> Self {
        MedError::AtGridPoint {
            index,
            source: Box::new(self),
        }
    }
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
