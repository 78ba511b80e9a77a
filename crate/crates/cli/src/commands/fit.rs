use std::io::Write;

use anyhow::Result;
use bfwork_core::calibration::{predictive_check, PredictiveSource};
use bfwork_core::fit::fit_model;
use bfwork_core::inference::prob_positive;
use bfwork_core::io::{fmt17, fmt4};
use bfwork_core::math::{mean, quantile_sorted, sd, sorted};
use bfwork_core::model::LmmPosterior;
use bfwork_core::rng::derive_seed;
use serde::Serialize;
use serde_json::json;

use super::{load_data, render, Outcome};
use crate::config::WorkflowConfig;

#[derive(Debug, Serialize)]
struct ParamSummary {
    name: String,
    mean: f64,
    sd: f64,
    q2_5: f64,
    q50: f64,
    q97_5: f64,
    rhat: f64,
    ess_bulk: f64,
    ess_tail: f64,
}

/// Constrained name and inverse transform for an unconstrained coordinate.
fn constrained(name: &str) -> (String, fn(f64) -> f64) {
    if let Some(rest) = name.strip_prefix("log_") {
        (rest.to_string(), f64::exp)
    } else if let Some(rest) = name.strip_prefix("atanh_") {
        (rest.to_string(), f64::tanh)
    } else {
        (name.to_string(), |x| x)
    }
}

pub fn run(cfg: &WorkflowConfig) -> Result<Outcome> {
    let data = load_data(cfg)?;
    let model = LmmPosterior::new(&data, cfg.fit_spec(), cfg.prior)?;
    let sampler = cfg.sampler.clone().with_seed(derive_seed(cfg.seed, "fit", 0));
    let fit = fit_model(&model, &sampler, None)?;
    let chains = fit.chains.as_ref().expect("mixed model has parameters");
    let diag = fit.diagnostics.as_ref().expect("computed with the draws");

    // rank-based diagnostics are unchanged by the monotone transforms
    let mut rows = Vec::new();
    for (j, name) in model.param_names().iter().enumerate() {
        if name.starts_with("z_") {
            continue;
        }
        let (cname, f) = constrained(name);
        let x: Vec<f64> = chains.param(j).into_iter().map(f).collect();
        let s = sorted(&x);
        rows.push(ParamSummary {
            name: cname,
            mean: mean(&x),
            sd: sd(&x),
            q2_5: quantile_sorted(&s, 0.025),
            q50: quantile_sorted(&s, 0.5),
            q97_5: quantile_sorted(&s, 0.975),
            rhat: diag.rhat[j],
            ess_bulk: diag.bulk_ess[j],
            ess_tail: diag.tail_ess[j],
        });
    }
    let p_pos = model.slope_index().map(|i| prob_positive(&chains.param(i))).transpose()?;

    let mut warnings = Vec::new();
    if !diag.converged() {
        warnings.push(format!(
            "sampler diagnostics: max R-hat {}, {} divergent transitions",
            fmt4(diag.max_rhat()),
            diag.divergences
        ));
    }

    let mut files = vec![(
        "fit_summary.csv".to_string(),
        render(|w| {
            writeln!(w, "parameter,mean,sd,q2.5,q50,q97.5,rhat,ess_bulk,ess_tail")?;
            for r in &rows {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{}",
                    r.name,
                    fmt17(r.mean),
                    fmt17(r.sd),
                    fmt17(r.q2_5),
                    fmt17(r.q50),
                    fmt17(r.q97_5),
                    fmt17(r.rhat),
                    fmt17(r.ess_bulk),
                    fmt17(r.ess_tail)
                )?;
            }
            Ok(())
        })?,
    )];

    let mut console = format!(
        "{:<24} {:>10} {:>10} {:>10} {:>10} {:>8} {:>8}\n",
        "parameter", "mean", "sd", "2.5%", "97.5%", "rhat", "ess"
    );
    for r in &rows {
        console += &format!(
            "{:<24} {:>10} {:>10} {:>10} {:>10} {:>8} {:>8}\n",
            r.name,
            fmt4(r.mean),
            fmt4(r.sd),
            fmt4(r.q2_5),
            fmt4(r.q97_5),
            fmt4(r.rhat),
            fmt4(r.ess_bulk.round())
        );
    }
    if let Some(p) = p_pos {
        console += &format!("P(beta1 > 0 | y) = {}\n", fmt4(p));
    }

    let mut ppc = serde_json::Value::Null;
    if cfg.ppc_datasets > 0 {
        let src = PredictiveSource::Posterior { model: &model, chains, data: &data };
        let s = predictive_check(src, cfg.ppc_datasets, derive_seed(cfg.seed, "ppc", 0))?;
        let obs = s.observed.as_ref().expect("posterior checks record the data");
        for (name, band, x) in [
            ("mean rt", &s.mean_rt, obs.mean_rt),
            ("condition difference", &s.cond_diff, obs.cond_diff),
            ("sd rt", &s.sd_rt, obs.sd_rt),
        ] {
            let (lo, hi) = band.band(80).expect("80 is a listed coverage");
            console +=
                &format!("posterior predictive {name}: observed {}, 10-90% [{}, {}]\n", fmt4(x), fmt4(lo), fmt4(hi));
        }
        ppc = json!({
            "observed": obs,
            "mean_rt": s.mean_rt,
            "cond_diff": s.cond_diff,
            "sd_rt": s.sd_rt,
        });
        files.push(("ppc_stats.csv".into(), render(|w| s.write_stats_csv(w))?));
        files.push(("ppc_hist.csv".into(), render(|w| s.write_hist_csv(w))?));
    }

    let outputs = json!({
        "parameters": rows,
        "prob_beta1_positive": p_pos,
        "max_rhat": diag.max_rhat(),
        "min_bulk_ess": diag.min_bulk_ess(),
        "divergences": diag.divergences,
        "n_draws": chains.n_draws(),
        "posterior_predictive": ppc,
    });
    Ok(Outcome { outputs, files, warnings, console })
}
