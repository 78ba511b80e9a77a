use serde::{Deserialize, Serialize};

use crate::error::{structural, Result};
use crate::marginal::BayesFactorEstimate;
use crate::math::{mean, sd};
use crate::rng::derive_seed;

/// Repeated Bayes factor estimates of the same comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub seeds: Vec<u64>,
    /// `None` where a repeat failed.
    pub bf10: Vec<Option<f64>>,
    pub log_bf10: Vec<f64>,
    pub mean_bf10: f64,
    pub sd_bf10: f64,
    /// Largest absolute difference of `log10 BF10` between two successful repeats.
    pub max_log10_spread: f64,
    pub failures: usize,
    pub any_unstable: bool,
}

/// Runs `estimate` once per seed and summarizes the spread of the results.
pub fn stability_check_seeds(
    seeds: &[u64],
    estimate: impl Fn(u64) -> Result<BayesFactorEstimate> + Sync,
) -> Result<StabilityReport> {
    use rayon::prelude::*;
    if seeds.len() < 2 {
        return Err(structural("a stability check needs at least two repeats"));
    }
    let results: Vec<Option<BayesFactorEstimate>> = seeds.par_iter().map(|&s| estimate(s).ok()).collect();
    let bf10: Vec<Option<f64>> = results.iter().map(|r| r.as_ref().and_then(|b| b.bf10())).collect();
    let log_bf10: Vec<f64> = results.iter().map(|r| r.as_ref().map_or(f64::NAN, |b| b.log_bf10)).collect();
    let ok: Vec<f64> = bf10.iter().flatten().copied().collect();
    let l10: Vec<f64> = ok.iter().map(|b| b.log10()).collect();
    let spread = match (l10.iter().copied().reduce(f64::max), l10.iter().copied().reduce(f64::min)) {
        (Some(a), Some(b)) => a - b,
        _ => f64::NAN,
    };
    Ok(StabilityReport {
        seeds: seeds.to_vec(),
        failures: bf10.iter().filter(|b| b.is_none()).count(),
        any_unstable: results.iter().flatten().any(|b| b.unstable),
        mean_bf10: if ok.is_empty() { f64::NAN } else { mean(&ok) },
        sd_bf10: if ok.len() > 1 { sd(&ok) } else { f64::NAN },
        max_log10_spread: spread,
        bf10,
        log_bf10,
    })
}

/// [`stability_check_seeds`] with `k` seeds derived from `seed`.
pub fn stability_check(
    k: usize,
    seed: u64,
    estimate: impl Fn(u64) -> Result<BayesFactorEstimate> + Sync,
) -> Result<StabilityReport> {
    let seeds: Vec<u64> = (0..k as u64).map(|r| derive_seed(seed, "repeat", r)).collect();
    stability_check_seeds(&seeds, estimate)
}
