use thiserror::Error;

use crate::model::Violation;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A domain object failed validation.
    #[error("invalid specification:\n{}", format_violations(.0))]
    InvalidSpec(Vec<Violation>),
    /// A function argument is outside its admissible range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// A numerical scheme broke down (NaN state, negative survival mass, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// Configuration file could not be read or parsed.
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
}

pub type Result<T> = std::result::Result<T, Error>;

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| format!("  {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}
