use std::fmt;

use serde::Serialize;

/// Errors raised anywhere in the library.
///
/// The variants are grouped by how a caller should react: bad input,
/// a test that cannot run on this data, or an internal failure.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("panel validation failed: {0}")]
    Validation(ValidationReport),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("test infeasible: {0}")]
    Infeasible(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {message}")]
    Csv { path: String, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn infeasible(msg: impl Into<String>) -> Self {
        Error::Infeasible(msg.into())
    }

    /// Short machine-readable tag used in structured error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Validation(_) => "validation",
            Error::Input(_) => "input",
            Error::Infeasible(_) => "infeasible",
            Error::Numerical(_) => "numerical",
            Error::Io { .. } => "io",
            Error::Csv { .. } => "csv",
        }
    }
}

/// One invariant violation found while validating a panel.
///
/// Coordinates are 0-based; `Display` renders them 1-based.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    NonBinaryTreatment {
        row: usize,
        col: usize,
        value: u8,
    },
    NonMonotoneTreatment {
        row: usize,
        col: usize,
        unit_id: String,
    },
    NonFinite {
        matrix: char,
        row: usize,
        col: usize,
    },
    ProbabilityOutOfRange {
        index: usize,
        value: f64,
    },
    ProbabilityNotIncreasing {
        index: usize,
    },
    DuplicateUnitId {
        row: usize,
        unit_id: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DimensionMismatch {
                what,
                expected,
                found,
            } => write!(f, "{what}: expected {expected}, found {found}"),
            Violation::NonBinaryTreatment { row, col, value } => write!(
                f,
                "treatment at (row {}, col {}) is {value}, expected 0 or 1",
                row + 1,
                col + 1
            ),
            Violation::NonMonotoneTreatment { row, col, unit_id } => write!(
                f,
                "treatment of unit {unit_id:?} decreases at (row {}, col {})",
                row + 1,
                col + 1
            ),
            Violation::NonFinite { matrix, row, col } => write!(
                f,
                "{matrix} has a non-finite value at (row {}, col {})",
                row + 1,
                col + 1
            ),
            Violation::ProbabilityOutOfRange { index, value } => {
                write!(f, "pi[{}] = {value} is outside (0, 1)", index + 1)
            }
            Violation::ProbabilityNotIncreasing { index } => write!(
                f,
                "pi[{}] is not strictly greater than pi[{}]",
                index + 1,
                index
            ),
            Violation::DuplicateUnitId { row, unit_id } => {
                write!(f, "duplicate unit id {unit_id:?} at row {}", row + 1)
            }
        }
    }
}

/// Every violation found in one validation pass.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn push(&mut self, v: Violation) {
        self.violations.push(v);
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 20;
        for (i, v) in self.violations.iter().take(SHOWN).enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        if self.violations.len() > SHOWN {
            write!(f, "; ... and {} more", self.violations.len() - SHOWN)?;
        }
        Ok(())
    }
}
