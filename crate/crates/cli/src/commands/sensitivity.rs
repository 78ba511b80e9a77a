use anyhow::Result;
use bfwork_core::inference::{meta_analysis_bf, sensitivity_curve, LmmFamily, MetaInput, SensitivityCurve};
use bfwork_core::io::fmt4;
use serde_json::json;

use super::{load_data, opt4, render, Outcome};
use crate::config::{ConfigError, WorkflowConfig};

fn outcome(curve: SensitivityCurve, file: &str) -> Result<Outcome> {
    let mut warnings = Vec::new();
    let mut console = format!("{:>10} {:>12}\n", "prior sd", "BF10");
    for ((sd, bf), stable) in curve.grid.iter().zip(curve.bf10()).zip(curve.stable()) {
        console += &format!("{:>10} {:>12}{}\n", fmt4(*sd), opt4(bf), if stable { "" } else { "  (unstable)" });
        if !stable {
            warnings.push(format!("estimate at prior sd {} is unstable or failed", fmt4(*sd)));
        }
    }
    let files = vec![(file.to_string(), render(|w| curve.write_csv(w))?)];
    Ok(Outcome { outputs: json!({ "curve": curve }), files, warnings, console })
}

pub fn run_sensitivity(cfg: &WorkflowConfig) -> Result<Outcome> {
    let data = load_data(cfg)?;
    let fam = LmmFamily { data: &data, spec: cfg.fit_spec(), prior: cfg.prior, sampler: cfg.sampler.clone() };
    outcome(sensitivity_curve(&fam, &cfg.sensitivity_grid, cfg.seed)?, "sensitivity.csv")
}

pub fn run_meta(cfg: &WorkflowConfig) -> Result<Outcome> {
    let path = cfg
        .meta_path
        .as_ref()
        .ok_or_else(|| ConfigError { line: None, message: "data.meta is not set (use --meta)".into() })?;
    let meta = MetaInput::read_csv_path(path)?;
    outcome(meta_analysis_bf(&meta, &cfg.meta_grid, cfg.meta_tau_scale, &cfg.sampler, cfg.seed)?, "meta.csv")
}
