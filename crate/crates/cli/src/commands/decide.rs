use anyhow::Result;
use bfwork_core::calibration::SbcEnsemble;
use bfwork_core::decision::{
    average_utility, decide, discovery_rates, optimize_threshold, tabulate, three_way_rates, Action, TruthActionCounts,
};
use bfwork_core::io::fmt4;
use serde_json::json;

use super::{render, Outcome};
use crate::config::{ConfigError, WorkflowConfig};

fn rate(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".into(), fmt4)
}

pub fn run(cfg: &WorkflowConfig, ensemble: Option<&str>, counts: Option<&[usize; 4]>) -> Result<Outcome> {
    let d = &cfg.decision;
    let mut files = Vec::new();
    let mut warnings = Vec::new();
    let mut console = String::new();
    let mut optimum = None;
    let mut three_way = None;

    let c = match (ensemble, counts) {
        (Some(path), None) => {
            let ens = SbcEnsemble::read_jsonl_path(path, cfg.seed)?;
            if !ens.is_valid() {
                warnings.push(format!("{} of {} runs in the ensemble failed", ens.n_failures(), ens.runs.len()));
            }
            let (bfs, truths) = (ens.bf10s(), ens.truths());
            let opt = optimize_threshold(&bfs, &truths, &d.utility, &d.grid)?;
            console += &format!(
                "best threshold {} with average utility {}\n",
                fmt4(opt.best_threshold),
                fmt4(opt.best_utility)
            );
            files.push(("utility_curve.csv".to_string(), render(|w| opt.write_csv(w))?));
            let tw = three_way_rates(&bfs, &truths, d.lo, d.hi)?;
            files.push(("rates_three_way.csv".to_string(), render(|w| tw.write_csv(w))?));
            optimum = Some(opt);
            three_way = Some(tw);
            let actions: Vec<Action> = bfs.iter().map(|b| decide(*b, d.threshold)).collect();
            tabulate(&truths, &actions)?
        }
        (None, Some(&[a, b, c, e])) => TruthActionCounts::new(a, b, c, e),
        _ => {
            return Err(ConfigError {
                line: None,
                message: "decide needs exactly one of --ensemble or --counts".into(),
            }
            .into())
        }
    };

    let utility = average_utility(&c, &d.utility)?;
    let rates = discovery_rates(&c)?;
    files.push(("rates.csv".to_string(), render(|w| rates.write_csv(w))?));
    let at = if counts.is_some() { "from counts".to_string() } else { format!("at threshold {}", fmt4(d.threshold)) };
    console += &format!(
        "{at}: average utility {}, false discovery rate {}, true discovery rate {}\n",
        fmt4(utility),
        rate(rates.false_discovery_rate()),
        rate(rates.true_discovery_rate())
    );

    let outputs = json!({
        "counts": c,
        "threshold": counts.is_none().then_some(d.threshold),
        "average_utility": utility,
        "rates": rates,
        "optimum": optimum,
        "three_way": three_way,
    });
    Ok(Outcome { outputs, files, warnings, console })
}
