//! Run records: everything needed to reproduce a command's outputs.

use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use crate::config::WorkflowConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// A reproducible command together with its command-specific inputs.
/// Settings shared across commands live in the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Invocation {
    Simulate,
    Fit,
    Bf,
    Sbc,
    Sensitivity,
    Meta,
    Decide { ensemble: Option<String>, counts: Option<[usize; 4]> },
}

impl Invocation {
    pub fn name(&self) -> &'static str {
        match self {
            Invocation::Simulate => "simulate",
            Invocation::Fit => "fit",
            Invocation::Bf => "bf",
            Invocation::Sbc => "sbc",
            Invocation::Sensitivity => "sensitivity",
            Invocation::Meta => "meta",
            Invocation::Decide { .. } => "decide",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    /// Outputs were produced but diagnostics or checks flagged a problem.
    Warn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub engine_version: String,
    pub invocation: Invocation,
    pub config: WorkflowConfig,
    pub started: String,
    pub finished: String,
    pub status: Status,
    pub warnings: Vec<String>,
    /// Names of the files written next to the record.
    pub files: Vec<String>,
    pub outputs: serde_json::Value,
}

impl RunRecord {
    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading record {}", path.display()))?;
        let rec: Self = serde_json::from_str(&text)
            .map_err(|e| bfwork_core::Error::Parse(format!("record {}: {e}", path.display())))?;
        if rec.schema_version != SCHEMA_VERSION {
            anyhow::bail!(bfwork_core::Error::Structural(format!(
                "record schema version {} is not supported (expected {SCHEMA_VERSION})",
                rec.schema_version
            )));
        }
        Ok(rec)
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing record {}", path.display()))
    }
}
