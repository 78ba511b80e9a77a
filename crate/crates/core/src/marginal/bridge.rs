//! Iterative bridge sampling with a moment-matched normal proposal.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{LogMlEstimate, LogMlMethod};
use crate::error::{structural, Error, Result};
use crate::math::{cholesky, forward_solve, log_add_exp, log_mean_exp, mean, median, variance, LN_SQRT_2PI};
use crate::model::LogDensity;
use crate::rng::stream;
use crate::sampler::{ess, ChainSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeConfig {
    pub max_iter: usize,
    /// Relative change of the ratio estimate at which iteration stops.
    pub tolerance: f64,
    /// Seed of the proposal draws.
    pub seed: u64,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self { max_iter: 1000, tolerance: 1e-10, seed: 1 }
    }
}

/// Multivariate normal stored through its lower Cholesky factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvNormal {
    mean: Vec<f64>,
    chol: Vec<f64>,
    log_det_chol: f64,
}

impl MvNormal {
    /// `cov` is row-major `d × d`.
    pub fn new(mean: Vec<f64>, cov: &[f64]) -> Result<Self> {
        let d = mean.len();
        if cov.len() != d * d {
            return Err(structural("covariance shape does not match the mean"));
        }
        let chol = cholesky(cov, d).ok_or_else(|| Error::Estimation("covariance is not positive definite".into()))?;
        let log_det_chol = (0..d).map(|i| chol[i * d + i].ln()).sum();
        Ok(Self { mean, chol, log_det_chol })
    }

    /// Sample mean and covariance of `draws`, with a small ridge if the sample
    /// covariance is numerically singular.
    pub fn fit<'a>(draws: impl Iterator<Item = &'a [f64]> + Clone, dim: usize) -> Result<Self> {
        let n = draws.clone().count();
        if n <= dim {
            return Err(Error::Estimation(format!("{n} draws cannot fit a {dim}-dimensional proposal")));
        }
        let mut mu = vec![0.0; dim];
        for x in draws.clone() {
            for (m, v) in mu.iter_mut().zip(x) {
                *m += v;
            }
        }
        mu.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = vec![0.0; dim * dim];
        let mut c = vec![0.0; dim];
        for x in draws {
            for (ci, (v, m)) in c.iter_mut().zip(x.iter().zip(&mu)) {
                *ci = v - m;
            }
            for i in 0..dim {
                for j in 0..=i {
                    cov[i * dim + j] += c[i] * c[j];
                }
            }
        }
        for i in 0..dim {
            for j in 0..=i {
                cov[i * dim + j] /= (n - 1) as f64;
                cov[j * dim + i] = cov[i * dim + j];
            }
        }
        match Self::new(mu.clone(), &cov) {
            Ok(p) => Ok(p),
            Err(_) => {
                let ridge = 1e-8 * (0..dim).map(|i| cov[i * dim + i]).sum::<f64>().max(1e-300) / dim as f64;
                (0..dim).for_each(|i| cov[i * dim + i] += ridge);
                Self::new(mu, &cov)
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// `L^{-1} (x - mean)`.
    pub fn whiten(&self, x: &[f64]) -> Vec<f64> {
        let mut z: Vec<f64> = x.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        forward_solve(&self.chol, self.dim(), &mut z);
        z
    }

    /// `mean + L z`.
    pub fn unwhiten(&self, z: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d).map(|i| self.mean[i] + (0..=i).map(|j| self.chol[i * d + j] * z[j]).sum::<f64>()).collect()
    }

    fn log_density_white(&self, z: &[f64]) -> f64 {
        -0.5 * z.iter().map(|v| v * v).sum::<f64>() - self.dim() as f64 * LN_SQRT_2PI - self.log_det_chol
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        self.log_density_white(&self.whiten(x))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.unwhiten(&z)
    }
}

/// Evaluates `log_target - log_proposal` at `n2` proposal draws.
fn proposal_terms(proposal: &MvNormal, log_target: &(dyn Fn(&[f64]) -> f64 + Sync), n2: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, "bridge", 0);
    let d = proposal.dim();
    let zs: Vec<Vec<f64>> = (0..n2).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect();
    zs.par_iter()
        .map(|z| {
            let x = proposal.unwhiten(z);
            log_target(&x) - proposal.log_density_white(z)
        })
        .collect()
}

/// The Meng–Wong fixed point on log ratios `l1` (posterior draws, grouped into
/// chains of length `chain_len`) and `l2` (proposal draws).
fn iterate(
    l1: &[f64],
    chain_len: usize,
    l2: &[f64],
    neff: f64,
    cfg: &BridgeConfig,
    total_draws: usize,
) -> Result<LogMlEstimate> {
    if let Some(v) = l1.iter().find(|v| !v.is_finite()) {
        return Err(Error::Estimation(format!("non-finite bridge term {v} at a posterior draw")));
    }
    if l2.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::Estimation("non-finite bridge term at a proposal draw".into()));
    }
    let n1 = l1.len() as f64;
    let n2 = l2.len() as f64;
    let lstar = median(l1);
    let l1s: Vec<f64> = l1.iter().map(|v| v - lstar).collect();
    let l2s: Vec<f64> = l2.iter().map(|v| v - lstar).collect();
    let ln_s1 = (neff / (neff + n2)).ln();
    let ln_s2 = (n2 / (neff + n2)).ln();

    let mut lr = 0.0;
    let mut converged = false;
    let mut iters = 0;
    let mut num = vec![0.0; l2s.len()];
    let mut den = vec![0.0; l1s.len()];
    while iters < cfg.max_iter {
        let c = ln_s2 + lr;
        for (o, l) in num.iter_mut().zip(&l2s) {
            *o = l - log_add_exp(ln_s1 + l, c);
        }
        for (o, l) in den.iter_mut().zip(&l1s) {
            *o = -log_add_exp(ln_s1 + l, c);
        }
        let next = log_mean_exp(&num) - log_mean_exp(&den);
        iters += 1;
        if !next.is_finite() {
            return Err(Error::Estimation("bridge iteration diverged".into()));
        }
        let change = (1.0 - (lr - next).exp()).abs();
        lr = next;
        if change < cfg.tolerance {
            converged = true;
            break;
        }
    }
    let log_ml = lr + lstar;

    // relative MSE in the style of Fruhwirth-Schnatter (2004)
    let s1 = n1 / (n1 + n2);
    let s2 = n2 / (n1 + n2);
    let f1: Vec<f64> = l2.iter().map(|l| 1.0 / (s1 + s2 * (log_ml - l).exp())).collect();
    let f2: Vec<f64> = l1.iter().map(|l| 1.0 / (s1 * (l - log_ml).exp() + s2)).collect();
    let f2_chains: Vec<Vec<f64>> = f2.chunks(chain_len).map(|c| c.to_vec()).collect();
    let ess_f2 = ess(&f2_chains);
    let tau = if ess_f2.is_finite() && ess_f2 > 0.0 { n1 / ess_f2 } else { 1.0 };
    let m1 = mean(&f1);
    let m2 = mean(&f2);
    let relative_mse_proxy = variance(&f1) / (n2 * m1 * m1) + tau * variance(&f2) / (n1 * m2 * m2);

    Ok(LogMlEstimate {
        log_ml,
        n_iterations: iters,
        converged,
        relative_mse_proxy,
        method: LogMlMethod::Bridge,
        low_draw_warning: total_draws < 1000,
    })
}

/// Bridge-sampling estimate of the log marginal likelihood of `model` from its
/// posterior draws.
///
/// The first half of every chain fits the normal proposal; the second half is
/// used in the estimator, together with as many proposal draws. Estimates
/// based on fewer than 1000 draws in total carry a warning.
pub fn bridge_log_ml<M: LogDensity>(chains: &ChainSet, model: &M, cfg: &BridgeConfig) -> Result<LogMlEstimate> {
    if chains.n_chains < 2 {
        return Err(structural("bridge sampling needs at least two chains"));
    }
    if chains.dim != model.dim() {
        return Err(structural("draws do not match the model dimension"));
    }
    let h = chains.iter / 2;
    if h < 2 {
        return Err(structural("chains are too short to split"));
    }
    let first = (0..chains.n_chains).flat_map(|c| (0..h).map(move |i| (c, i)));
    let fit_draws = first.map(|(c, i)| chains.draw(c, i));
    let proposal = MvNormal::fit(fit_draws, chains.dim)?;

    let second: Vec<(usize, usize)> =
        (0..chains.n_chains).flat_map(|c| (chains.iter - h..chains.iter).map(move |i| (c, i))).collect();
    let l1: Vec<f64> = second
        .iter()
        .map(|&(c, i)| chains.log_joint[c * chains.iter + i] - proposal.log_density(chains.draw(c, i)))
        .collect();

    let neff = {
        let per_param: Vec<f64> = (0..chains.dim)
            .map(|j| {
                let split: Vec<Vec<f64>> = (0..chains.n_chains)
                    .map(|c| (chains.iter - h..chains.iter).map(|i| chains.draw(c, i)[j]).collect())
                    .collect();
                ess(&split)
            })
            .filter(|e| e.is_finite())
            .collect();
        let n1 = l1.len() as f64;
        if per_param.is_empty() {
            n1
        } else {
            median(&per_param).clamp(1.0, n1)
        }
    };
    let target = |x: &[f64]| model.log_density(x);
    let l2 = proposal_terms(&proposal, &target, l1.len(), cfg.seed);
    iterate(&l1, h, &l2, neff, cfg, chains.n_draws())
}

/// Bridge sampling with a caller-supplied proposal; every draw in `draws` is
/// used in the estimator and treated as independent.
pub fn bridge_log_ml_with_proposal(
    draws: &[Vec<f64>],
    log_target: &(dyn Fn(&[f64]) -> f64 + Sync),
    proposal: &MvNormal,
    cfg: &BridgeConfig,
) -> Result<LogMlEstimate> {
    if draws.is_empty() {
        return Err(structural("no draws"));
    }
    let l1: Vec<f64> = draws.iter().map(|x| log_target(x) - proposal.log_density(x)).collect();
    let l2 = proposal_terms(proposal, log_target, l1.len(), cfg.seed);
    let n = l1.len();
    iterate(&l1, n, &l2, n as f64, cfg, n)
}
