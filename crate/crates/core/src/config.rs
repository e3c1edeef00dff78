//! JSON run configuration.
//!
//! Top-level keys: `pool`, `factor`, `grid`, `seed`. Unknown keys are
//! rejected anywhere in the document. The factor's `epsilon` accepts either
//! a number or the preset string `"inv-sqrt-n"` (ε = 1/√N for the
//! configured pool size).
//!
//! ```json
//! {
//!   "pool": {
//!     "groups": [
//!       { "params": { "lambda0": 0.2, "alpha": 0.5, "lambda_bar": 2.0,
//!                     "sigma": 0.5, "beta_c": 10.0, "beta_s": 1.0 },
//!         "weight": 0.16666666666666666 }
//!     ],
//!     "n_names": 200
//!   },
//!   "factor": { "kind": { "type": "ou", "gamma": 1.0, "vol": 1.0, "mean": 0.0 },
//!               "x0": 0.0, "epsilon": "inv-sqrt-n" },
//!   "grid": { "horizon": 1.0, "n_steps": 500 },
//!   "seed": { "master_seed": 42 }
//! }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    validate_pool, FactorKind, FactorSpec, PoolSpec, SeedSpec, Severity, TimeGrid, Violation,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid configuration:\n{}", .0.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Violation>),
}

/// ε as written in a config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsilonSpec {
    Value(f64),
    Preset(EpsilonPreset),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpsilonPreset {
    /// ε_N = 1/√N for the configured pool size.
    #[serde(rename = "inv-sqrt-n")]
    InvSqrtN,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorConfig {
    pub kind: FactorKind,
    pub x0: f64,
    pub epsilon: EpsilonSpec,
}

impl FactorConfig {
    pub fn resolve(&self, n_names: usize) -> FactorSpec {
        let epsilon = match self.epsilon {
            EpsilonSpec::Value(v) => v,
            EpsilonSpec::Preset(EpsilonPreset::InvSqrtN) => 1.0 / (n_names as f64).sqrt(),
        };
        FactorSpec {
            kind: self.kind,
            x0: self.x0,
            epsilon,
        }
    }
}

/// The raw configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub pool: PoolSpec,
    pub factor: FactorConfig,
    pub grid: TimeGrid,
    pub seed: SeedSpec,
}

/// A validated configuration with ε resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub pool: PoolSpec,
    pub factor: FactorSpec,
    pub grid: TimeGrid,
    pub seed: SeedSpec,
    /// Non-fatal findings (e.g. negative contagion sensitivities).
    pub warnings: Vec<Violation>,
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<ResolvedConfig, ConfigError> {
    let raw: RunConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    resolve(raw)
}

/// Loads a configuration file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ResolvedConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}

fn resolve(raw: RunConfig) -> Result<ResolvedConfig, ConfigError> {
    let factor = raw.factor.resolve(raw.pool.n_names);
    let mut findings = validate_pool(&raw.pool);
    factor.validate(&mut findings);
    raw.grid.validate(&mut findings);
    let (errors, warnings): (Vec<_>, Vec<_>) = findings
        .into_iter()
        .partition(|v| v.severity == Severity::Error);
    if !errors.is_empty() {
        return Err(ConfigError::Invalid(errors));
    }
    Ok(ResolvedConfig {
        pool: raw.pool,
        factor,
        grid: raw.grid,
        seed: raw.seed,
        warnings,
    })
}
