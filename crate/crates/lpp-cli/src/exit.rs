use lpp_core::LppError;
use std::fmt;

pub const SUCCESS: i32 = 0;
pub const VALIDATION: i32 = 2;
pub const TOLERANCE: i32 = 3;
pub const BUDGET: i32 = 4;

/// Failures raised by the command layer itself.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Validation(String),
    Tolerance(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid configuration: {m}"),
            CliError::Tolerance(m) => write!(f, "tolerance exceeded: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

pub fn library_code(e: &LppError) -> i32 {
    match e {
        LppError::BudgetExceeded { .. } | LppError::Allocation { .. } => BUDGET,
        LppError::Division { .. } | LppError::NonReal { .. } | LppError::Pole(_) | LppError::Method { .. } => TOLERANCE,
        LppError::Domain(_)
        | LppError::Range { .. }
        | LppError::SingularBasis
        | LppError::Shape(_)
        | LppError::ContourNesting(_)
        | LppError::Rule(_)
        | LppError::Hypothesis(_)
        | LppError::Config(_) => VALIDATION,
    }
}

pub fn code_for(err: &anyhow::Error) -> i32 {
    if let Some(e) = err.downcast_ref::<CliError>() {
        return match e {
            CliError::Validation(_) => VALIDATION,
            CliError::Tolerance(_) => TOLERANCE,
        };
    }
    if let Some(e) = err.downcast_ref::<LppError>() {
        return library_code(e);
    }
    VALIDATION
}
