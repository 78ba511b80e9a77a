use anyhow::Result;
use bfwork_core::calibration::{
    run_sbc, run_sbc_with, sbc_prior_recovery, sbc_truth_table, ConjugatePipeline, SbcConfig, SbcEnsemble,
    MAX_FAILURE_FRACTION,
};
use bfwork_core::inference::Hypothesis;
use bfwork_core::io::fmt4;
use serde_json::json;

use super::{render, Outcome};
use crate::config::{SbcPipelineKind, WorkflowConfig};

fn ensemble(cfg: &WorkflowConfig) -> Result<SbcEnsemble> {
    Ok(match cfg.sbc_pipeline {
        SbcPipelineKind::Lmm => run_sbc(&SbcConfig {
            n_runs: cfg.sbc_runs,
            model_prior: cfg.model_prior,
            design: cfg.design.clone(),
            param_prior: cfg.prior,
            sim_spec: cfg.sim_spec(),
            fit_spec: cfg.fit_spec(),
            method: cfg.method,
            sampler: cfg.sampler.clone(),
            seed: cfg.seed,
        })?,
        SbcPipelineKind::Conjugate => {
            run_sbc_with(&ConjugatePipeline::default(), cfg.sbc_runs, cfg.model_prior, cfg.seed)?
        }
    })
}

pub fn run(cfg: &WorkflowConfig) -> Result<Outcome> {
    let ens = ensemble(cfg)?;
    let mut warnings = Vec::new();
    if !ens.is_valid() {
        warnings.push(format!(
            "{} of {} runs failed, more than {}%; the ensemble is not valid",
            ens.n_failures(),
            ens.runs.len(),
            MAX_FAILURE_FRACTION * 100.0
        ));
    }
    let flagged = ens.runs.iter().filter(|r| r.diagnostics_warning()).count();
    if flagged > 0 {
        warnings.push(format!("{flagged} runs had sampler or estimator warnings"));
    }

    let mut files = vec![("sbc_runs.jsonl".to_string(), render(|w| ens.write_jsonl(w))?)];
    let mut console = format!("{} runs, {} failed\n", ens.runs.len(), ens.n_failures());
    let (verdict, recovery) = match sbc_prior_recovery(&ens) {
        Ok(rec) => {
            files.push(("sbc_summary.csv".into(), render(|w| rec.write_csv(w))?));
            console += &format!(
                "mean P(H1 | y) = {} [{}, {}] against prior {}\n",
                fmt4(rec.mean_p_h1),
                fmt4(rec.ci_low),
                fmt4(rec.ci_high),
                fmt4(rec.prior_p_h1)
            );
            let verdict = match rec.direction() {
                0 => "pass",
                1 => "fail: posterior favours H1 too often",
                _ => "fail: posterior favours H0 too often",
            };
            if !rec.pass {
                warnings.push(format!("prior recovery {verdict}"));
            }
            console += &format!("calibration {verdict} (resolution {})\n", fmt4(rec.resolution()));
            (verdict.to_string(), Some(rec))
        }
        Err(e) => {
            warnings.push(e.to_string());
            console += &format!("calibration not assessed: {e}\n");
            ("insufficient runs".to_string(), None)
        }
    };

    let table = sbc_truth_table(&ens);
    files.push(("sbc_truth_table.csv".into(), render(|w| table.write_csv(w))?));
    for h in [Hypothesis::H0, Hypothesis::H1] {
        if let Some(r) = table.row(h) {
            console += &format!("true {h:?}: n = {}, P(H0) = {}%, P(H1) = {}%\n", r.n, fmt4(r.p_h0), fmt4(r.p_h1));
        }
    }

    let outputs = json!({
        "n_runs": ens.runs.len(),
        "failures": ens.n_failures(),
        "valid": ens.is_valid(),
        "recovery": recovery,
        "verdict": verdict,
        "truth_table": table,
    });
    Ok(Outcome { outputs, files, warnings, console })
}
