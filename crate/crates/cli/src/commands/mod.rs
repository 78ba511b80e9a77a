//! Subcommand implementations. Each returns its outputs and file contents
//! without touching the filesystem, so replays can compare them directly.

mod bf;
mod decide;
mod fit;
mod sbc;
mod sensitivity;
mod simulate;

use anyhow::Result;
use bfwork_core::model::Dataset;

use crate::config::{ConfigError, WorkflowConfig};
use crate::record::{Invocation, Status};

/// What a command produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub outputs: serde_json::Value,
    /// `(file name, contents)` in write order.
    pub files: Vec<(String, Vec<u8>)>,
    pub warnings: Vec<String>,
    /// Human-readable summary for the terminal.
    pub console: String,
}

impl Outcome {
    pub fn status(&self) -> Status {
        if self.warnings.is_empty() {
            Status::Ok
        } else {
            Status::Warn
        }
    }
}

pub fn execute(inv: &Invocation, cfg: &WorkflowConfig) -> Result<Outcome> {
    match inv {
        Invocation::Simulate => simulate::run(cfg),
        Invocation::Fit => fit::run(cfg),
        Invocation::Bf => bf::run(cfg),
        Invocation::Sbc => sbc::run(cfg),
        Invocation::Sensitivity => sensitivity::run_sensitivity(cfg),
        Invocation::Meta => sensitivity::run_meta(cfg),
        Invocation::Decide { ensemble, counts } => decide::run(cfg, ensemble.as_deref(), counts.as_ref()),
    }
}

fn load_data(cfg: &WorkflowConfig) -> Result<Dataset> {
    let path = cfg
        .data_path
        .as_ref()
        .ok_or_else(|| ConfigError { line: None, message: "data.path is not set (use --data)".into() })?;
    Ok(Dataset::read_csv_path(path)?)
}

/// Renders a CSV writer into bytes.
fn render(f: impl FnOnce(&mut Vec<u8>) -> bfwork_core::Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn opt4(x: Option<f64>) -> String {
    x.map_or_else(|| "failed".to_string(), bfwork_core::io::fmt4)
}
