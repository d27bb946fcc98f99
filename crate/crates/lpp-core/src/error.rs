use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LppError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("allocation of {cells} cells exceeds the cap of {cap}")]
    Allocation { cells: u64, cap: u64 },
    #[error("index ({row}, {col}) outside a {rows}x{cols} field")]
    Range {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("basis vectors are linearly dependent")]
    SingularBasis,
    #[error("draw budget of {budget} exhausted after {accepted} acceptances")]
    BudgetExceeded { budget: u64, accepted: u64 },
    #[error("pole hit: {0}")]
    Pole(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("contour nesting violated: {0}")]
    ContourNesting(String),
    #[error("rewrite rule not applicable: {0}")]
    Rule(String),
    #[error("observation plan violates the hypotheses: {0}")]
    Hypothesis(String),
    #[error("denominator is indistinguishable from zero ({value:e} +/- {err:e})")]
    Division { value: f64, err: f64 },
    #[error("result has imaginary residue {residue:e} relative to {value:e}")]
    NonReal { value: f64, residue: f64 },
    #[error("method {method} does not support {detail}")]
    Method { method: String, detail: String },
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, LppError>;

/// Non-fatal diagnostics attached to numerical results.
#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    PoleProximity { min_distance: f64 },
    Cancellation { ratio: f64 },
    Truncation { tail: f64, value: f64 },
    SkippedTerm { n: Vec<usize>, dimension: usize },
    Conjectural(&'static str),
    Boundary(String),
}

impl std::fmt::Display for Warning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Warning::PoleProximity { min_distance } => {
                write!(f, "pole proximity: nodes {min_distance:e} apart")
            }
            Warning::Cancellation { ratio } => {
                write!(f, "cancellation: result is {ratio:e} of the largest summand")
            }
            Warning::Truncation { tail, value } => {
                write!(f, "truncation: tail estimate {tail:e} vs value {value:e}")
            }
            Warning::SkippedTerm { n, dimension } => {
                write!(f, "skipped term n={n:?} of dimension {dimension}")
            }
            Warning::Conjectural(what) => write!(f, "conjectural branch: {what}"),
            Warning::Boundary(what) => write!(f, "boundary input: {what}"),
        }
    }
}
