use std::io::Write;

use anyhow::Result;
use bfwork_core::fit::lmm_bayes_factor;
use bfwork_core::inference::{jeffreys_label, posterior_model_probs_log, stability_check_seeds};
use bfwork_core::io::{fmt17, fmt4};
use bfwork_core::math::median;
use bfwork_core::rng::derive_seed;
use rayon::prelude::*;
use serde_json::json;

use super::{load_data, opt4, render, Outcome};
use crate::config::WorkflowConfig;

/// Stability spread above which repeated estimates are flagged, in log10 units.
const MAX_LOG10_SPREAD: f64 = 0.1;

pub fn run(cfg: &WorkflowConfig) -> Result<Outcome> {
    let data = load_data(cfg)?;
    let seeds: Vec<u64> = (0..cfg.repeats as u64).map(|r| derive_seed(cfg.seed, "repeat", r)).collect();
    let mut fits = Vec::with_capacity(seeds.len());
    for f in seeds
        .par_iter()
        .map(|&s| lmm_bayes_factor(&data, cfg.fit_spec(), &cfg.prior, &cfg.sampler, cfg.method, s))
        .collect::<Vec<_>>()
    {
        match f {
            // problems with the data or model are the same for every repeat
            Err(e @ (bfwork_core::Error::Structural(_) | bfwork_core::Error::Domain(_))) => return Err(e.into()),
            other => fits.push(other.map_err(|e| e.to_string())),
        }
    }
    let report = stability_check_seeds(&seeds, |s| {
        let i = seeds.iter().position(|x| *x == s).expect("seed from the list");
        match &fits[i] {
            Ok(f) => Ok(f.bf.clone()),
            Err(e) => Err(bfwork_core::Error::Estimation(e.clone())),
        }
    })?;

    let mut warnings = Vec::new();
    let mut max_rhat = f64::NAN;
    let mut divergences = 0;
    for (i, f) in fits.iter().enumerate() {
        match f {
            Ok(f) => {
                let (r, d) = f.worst_diagnostics();
                max_rhat = max_rhat.max(r);
                divergences += d;
                if let Some(reason) = &f.bf.failure {
                    warnings.push(format!("repeat {i} failed: {reason}"));
                }
            }
            Err(e) => warnings.push(format!("repeat {i} failed: {e}")),
        }
    }
    if max_rhat > 1.01 || divergences > 0 {
        warnings
            .push(format!("sampler diagnostics: max R-hat {}, {divergences} divergent transitions", fmt4(max_rhat)));
    }
    if report.any_unstable {
        warnings.push("marginal likelihood estimate did not converge in at least one repeat".into());
    }
    if report.max_log10_spread > MAX_LOG10_SPREAD {
        warnings.push(format!("log10 BF10 varies by {} across repeats", fmt4(report.max_log10_spread)));
    }

    let logs: Vec<f64> = report.log_bf10.iter().copied().filter(|x| x.is_finite()).collect();
    let summary = if logs.is_empty() {
        None
    } else {
        let lb = median(&logs);
        let post = posterior_model_probs_log(lb, &cfg.model_prior);
        Some((lb, post))
    };
    let label = summary.and_then(|(lb, _)| jeffreys_label(lb.exp()).ok());

    let mut console = String::new();
    for (s, b) in report.seeds.iter().zip(&report.bf10) {
        console += &format!("seed {s:>20}  BF10 = {}\n", opt4(*b));
    }
    match (summary, label) {
        (Some((lb, post)), Some(label)) => {
            console += &format!(
                "median BF10 = {} (log10 {}), spread {} log10 units\n{label}\nP(H1 | y) = {}, P(H0 | y) = {}\n",
                fmt4(lb.exp()),
                fmt4(lb / std::f64::consts::LN_10),
                fmt4(report.max_log10_spread),
                fmt4(post.p_h1),
                fmt4(post.p_h0)
            );
        }
        _ => console += "every repeat failed\n",
    }

    let file = render(|w| {
        writeln!(w, "repeat,seed,bf10,log10_bf10,stable")?;
        for (i, (s, b)) in report.seeds.iter().zip(&report.bf10).enumerate() {
            let stable = fits[i].as_ref().is_ok_and(|f| !f.bf.unstable && !f.bf.is_failure());
            let bf = b.unwrap_or(f64::NAN);
            writeln!(w, "{i},{s},{},{},{stable}", fmt17(bf), fmt17(bf.log10()))?;
        }
        Ok(())
    })?;

    let outputs = json!({
        "method": cfg.method,
        "stability": report,
        "median_log_bf10": summary.map(|s| s.0),
        "median_bf10": summary.map(|s| s.0.exp()),
        "label": label.map(|l| l.to_string()),
        "posterior": summary.map(|s| s.1),
        "max_rhat": max_rhat,
        "divergences": divergences,
    });
    Ok(Outcome { outputs, files: vec![("bf_repeats.csv".into(), file)], warnings, console })
}
