use std::fmt;

use crate::solver::SolveReport;
use crate::types::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// What went wrong while parsing a tabular input file.
#[derive(Debug, Clone, PartialEq)]
pub enum ParseIssue {
    NonNumeric(String),
    FieldCount { expected: usize, got: usize },
    Malformed(String),
}

impl fmt::Display for ParseIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseIssue::NonNumeric(v) => write!(f, "non-numeric cell {v:?}"),
            ParseIssue::FieldCount { expected, got } => {
                write!(f, "expected {expected} fields, found {got}")
            }
            ParseIssue::Malformed(msg) => f.write_str(msg),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid dataset: {}", join_violations(.0))]
    InvalidDataset(Vec<Violation>),

    #[error("matrix factorization failed: {0}")]
    Factorization(String),

    #[error("class {0} does not occur in the dataset")]
    UnknownClass(usize),

    #[error("class {class} has {n_k} samples, at least {required} are needed")]
    TooFewSamples {
        class: usize,
        n_k: usize,
        required: usize,
    },

    #[error("expected two classes, found {0}; use the multi-group fit instead")]
    MoreThanTwoClasses(usize),

    #[error("log|D Sigma + I| is undefined: eigenvalue {eigenvalue:e} of Sigma^1/2 D Sigma^1/2 + I is not positive")]
    NonPositiveEigenvalue { eigenvalue: f64 },

    #[error("interior-point solver did not converge after {} iterations (duality gap {:e})", .report.iterations, .report.duality_gap)]
    NotConverged { report: Box<SolveReport> },

    #[error("no point satisfies the constraints (smallest violation found {min_violation:e} above lambda)")]
    Infeasible { min_violation: f64 },

    #[error("conjugate gradient stagnated (relative residual {residual:e})")]
    NumericalBreakdown {
        residual: f64,
        report: Option<Box<SolveReport>>,
    },

    #[error("transformed variance of feature {feature} is zero")]
    DegenerateVariance { feature: usize },

    #[error("dimension {p} is too small, need at least {min}")]
    DimensionTooSmall { p: usize, min: usize },

    #[error("dimension {0} must be even")]
    OddDimension(usize),

    #[error("every tuning candidate was rejected")]
    AllCandidatesInvalid,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at row {row}, column {col}: {issue}")]
    Parse {
        row: usize,
        col: usize,
        issue: ParseIssue,
    },

    #[error("label column {0:?} not found")]
    MissingLabelColumn(String),

    #[error("schema version {found} is not supported (this build reads up to {supported})")]
    SchemaVersionMismatch { found: u32, supported: u32 },

    #[error("corrupt model file: {0}")]
    CorruptModel(String),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

impl Error {
    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 4,
            Error::NonPositiveEigenvalue { .. }
            | Error::NotConverged { .. }
            | Error::Infeasible { .. }
            | Error::NumericalBreakdown { .. }
            | Error::Factorization(_)
            | Error::DegenerateVariance { .. }
            | Error::AllCandidatesInvalid => 3,
            _ => 2,
        }
    }
}
