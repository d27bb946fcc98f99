pub mod cauchy;
pub mod contour;
pub mod engine;
pub mod error;
pub mod finite;
pub mod identities;
pub mod integral;
pub mod lattice;
pub mod limit;
pub mod lists;
pub mod logc;
pub mod plan;
pub mod scaling;

pub use error::{LppError, Result, Warning};
pub use logc::LogComplex;
pub use scaling::*;
