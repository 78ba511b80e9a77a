//! Savage–Dickey density ratio for a point null on one parameter.

use serde::{Deserialize, Serialize};

use super::{BayesFactorEstimate, BfComponents};
use crate::error::{structural, Result};
use crate::math::{log_sum_exp, mean, normal_lpdf, quantile_sorted, sd, sorted, LN_SQRT_2PI};

/// How the posterior density at zero is estimated from draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityEstimator {
    /// Normal density with the draws' mean and SD.
    #[default]
    NormalApprox,
    /// Gaussian kernel density estimate with Silverman's bandwidth.
    Kde,
}

/// `0.9 min(sd, IQR / 1.34) n^(-1/5)`.
pub fn silverman_bandwidth(draws: &[f64]) -> f64 {
    let s = sorted(draws);
    let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
    let spread = if iqr > 0.0 { sd(draws).min(iqr / 1.34) } else { sd(draws) };
    0.9 * spread * (draws.len() as f64).powf(-0.2)
}

fn kde_log_density_at(draws: &[f64], x: f64, h: f64) -> f64 {
    let terms: Vec<f64> = draws.iter().map(|d| -0.5 * ((x - d) / h).powi(2)).collect();
    log_sum_exp(&terms) - (draws.len() as f64 * h).ln() - LN_SQRT_2PI
}

/// Bayes factor of the point null `theta = 0` from posterior draws of `theta`
/// and its prior density at zero. The returned estimate is oriented as BF10
/// (its `log_bf10` is `-log BF01`).
///
/// The result is flagged unstable when fewer than 1% of the draws lie within
/// one bandwidth of zero. With the kernel estimator and no draws at all in that
/// range, the normal approximation is used instead.
pub fn savage_dickey_bf01(
    draws: &[f64],
    prior_density_at_zero: f64,
    estimator: DensityEstimator,
) -> Result<BayesFactorEstimate> {
    if draws.len() < 1000 {
        return Err(structural(format!("Savage-Dickey needs at least 1000 draws, got {}", draws.len())));
    }
    if !(prior_density_at_zero > 0.0 && prior_density_at_zero.is_finite()) {
        return Err(structural("prior density at zero must be positive and finite"));
    }
    let h = silverman_bandwidth(draws);
    let near = draws.iter().filter(|d| d.abs() <= h).count();
    let mut unstable = (near as f64) < 0.01 * draws.len() as f64;
    let mut used = estimator;
    let log_post = match estimator {
        DensityEstimator::Kde if near > 0 && h > 0.0 => kde_log_density_at(draws, 0.0, h),
        DensityEstimator::Kde => {
            unstable = true;
            used = DensityEstimator::NormalApprox;
            normal_lpdf(0.0, mean(draws), sd(draws))
        }
        DensityEstimator::NormalApprox => normal_lpdf(0.0, mean(draws), sd(draws)),
    };
    let log_prior = prior_density_at_zero.ln();
    Ok(BayesFactorEstimate::from_log(
        log_prior - log_post,
        BfComponents::DensityRatio { log_posterior_density: log_post, log_prior_density: log_prior, estimator: used },
        unstable,
    ))
}
