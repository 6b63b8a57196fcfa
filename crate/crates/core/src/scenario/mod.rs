//! Scenario files: a TOML description of a deployment and its applications,
//! validated against the schema, run into metrics and trace files, swept
//! over a parameter grid, or summarized by closed-form planning tables.

mod config;
mod plan;
mod run;
mod sweep;

use std::path::Path;

use thiserror::Error;

pub use config::{
    AppConfig, AppType, CellConfig, ClassicalLinkConfig, Defaults, LinkParams, NodeConfig, PolicyConfig, PolicyMode,
    QuantumLinkConfig, ScenarioConfig, Violation, SCHEMA_VERSION,
};
pub use plan::{block_plan_csv, qkd_plan, QkdPlanRow};
pub use run::{run, AppOutcome, RunOutput, Summary};
pub use sweep::{replication_seed, set_param, sweep, Aggregate, SweepResult, SweepRow};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("{} schema violation(s):\n{}", .0.len(), .0.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Violation>),
    #[error("unknown parameter path '{0}'")]
    UnknownPath(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Analytic(#[from] crate::analytic::AnalyticError),
}

/// Parse scenario text into a raw document, keeping line information in
/// syntax errors.
pub fn parse_document(text: &str) -> Result<toml::Value, ScenarioError> {
    text.parse::<toml::Table>().map(toml::Value::Table).map_err(|e| ScenarioError::Parse(e.to_string()))
}

/// Deserialize and validate a document.
pub fn parse_config(doc: toml::Value) -> Result<ScenarioConfig, ScenarioError> {
    let cfg: ScenarioConfig = doc.try_into().map_err(|e: toml::de::Error| ScenarioError::Parse(e.to_string()))?;
    let violations = cfg.validate();
    if violations.is_empty() {
        Ok(cfg)
    } else {
        Err(ScenarioError::Invalid(violations))
    }
}

/// Parse, deserialize and validate scenario text.
pub fn load_str(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    let violations = cfg.validate();
    if violations.is_empty() {
        Ok(cfg)
    } else {
        Err(ScenarioError::Invalid(violations))
    }
}

pub fn read_file(path: &Path) -> Result<String, ScenarioError> {
    std::fs::read_to_string(path).map_err(|source| ScenarioError::Read { path: path.display().to_string(), source })
}

pub fn load_file(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
    let mut cfg = load_str(&read_file(path)?)?;
    if cfg.name.is_empty() {
        cfg.name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    }
    Ok(cfg)
}

/// Render a configuration back to TOML.
pub fn to_toml(cfg: &ScenarioConfig) -> String {
    toml::to_string(cfg).expect("scenario types serialize to TOML")
}
