//! Posterior fitting and Bayes factor estimation for whole models.

use serde::{Deserialize, Serialize};

use crate::error::{structural, Result};
use crate::marginal::{
    bayes_factor, log_ml, savage_dickey_bf01, BayesFactorEstimate, BridgeConfig, DensityEstimator, LogMlEstimate,
};
use crate::model::{Dataset, LmmModelSpec, LmmPosterior, LogDensity, PriorSpec};
use crate::rng::derive_seed;
use crate::sampler::{sample_posterior, ChainSet, Diagnostics, SamplerConfig};

/// How a Bayes factor is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "method", content = "estimator", rename_all = "snake_case")]
pub enum BfMethod {
    #[default]
    Bridge,
    SavageDickey(DensityEstimator),
}

/// Posterior draws of one model with their diagnostics and, optionally,
/// the model's marginal likelihood. Models without free parameters have no draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub chains: Option<ChainSet>,
    pub diagnostics: Option<Diagnostics>,
    pub log_ml: Option<LogMlEstimate>,
}

/// Samples the posterior of `model` and, when `bridge` is given, estimates its
/// marginal likelihood from the draws.
pub fn fit_model<M: LogDensity>(model: &M, sampler: &SamplerConfig, bridge: Option<&BridgeConfig>) -> Result<ModelFit> {
    if model.dim() == 0 {
        let log_ml = bridge.map(|b| log_ml(model, None, b)).transpose()?;
        return Ok(ModelFit { chains: None, diagnostics: None, log_ml });
    }
    let chains = sample_posterior(model, sampler)?;
    let diagnostics = chains.diagnostics();
    let log_ml = bridge.map(|b| log_ml(model, Some(&chains), b)).transpose()?;
    Ok(ModelFit { chains: Some(chains), diagnostics: Some(diagnostics), log_ml })
}

/// Sampler and bridge settings for one model, both seeded from `seed` and `tag`.
pub fn seeded(sampler: &SamplerConfig, seed: u64, tag: &str) -> (SamplerConfig, BridgeConfig) {
    let s = sampler.clone().with_seed(derive_seed(seed, tag, 0));
    let b = BridgeConfig { seed: derive_seed(seed, tag, 1), ..BridgeConfig::default() };
    (s, b)
}

/// Bayes factor of a slope model against its null from two generic models.
/// `slope_index` and `prior_density_at_zero` are needed for the Savage–Dickey method only.
pub fn nested_bayes_factor<M1: LogDensity, M0: LogDensity>(
    h1: &M1,
    h0: &M0,
    slope: Option<(usize, f64)>,
    sampler: &SamplerConfig,
    method: BfMethod,
    seed: u64,
) -> Result<NestedBf> {
    match method {
        BfMethod::Bridge => {
            let (s1, b1) = seeded(sampler, seed, "h1");
            let (s0, b0) = seeded(sampler, seed, "h0");
            let f1 = fit_model(h1, &s1, Some(&b1))?;
            let f0 = fit_model(h0, &s0, Some(&b0))?;
            let bf = bayes_factor(
                f1.log_ml.as_ref().expect("bridge requested"),
                f0.log_ml.as_ref().expect("bridge requested"),
            );
            Ok(NestedBf { bf, h1: f1, h0: Some(f0) })
        }
        BfMethod::SavageDickey(est) => {
            let (idx, dens0) =
                slope.ok_or_else(|| structural("Savage-Dickey needs the slope index and prior density"))?;
            let (s1, _) = seeded(sampler, seed, "h1");
            let f1 = fit_model(h1, &s1, None)?;
            let draws = f1.chains.as_ref().expect("slope model has parameters").param(idx);
            let bf = savage_dickey_bf01(&draws, dens0, est)?;
            Ok(NestedBf { bf, h1: f1, h0: None })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedBf {
    pub bf: BayesFactorEstimate,
    pub h1: ModelFit,
    pub h0: Option<ModelFit>,
}

impl NestedBf {
    /// Worst diagnostics over the fitted models: maximum R-hat and total divergences.
    pub fn worst_diagnostics(&self) -> (f64, usize) {
        let mut rhat = f64::NAN;
        let mut div = 0;
        for f in std::iter::once(&self.h1).chain(self.h0.as_ref()) {
            if let Some(d) = &f.diagnostics {
                rhat = rhat.max(d.max_rhat());
                div += d.divergences;
            }
        }
        (rhat, div)
    }
}

/// Bayes factor for the population slope of the mixed model: `h1` against
/// `h1.null()`, both under `prior`.
pub fn lmm_bayes_factor(
    data: &Dataset,
    h1: LmmModelSpec,
    prior: &PriorSpec,
    sampler: &SamplerConfig,
    method: BfMethod,
    seed: u64,
) -> Result<NestedBf> {
    let m1 = LmmPosterior::new(data, h1.alternative(), *prior)?;
    let m0 = LmmPosterior::new(data, h1.null(), *prior)?;
    let slope = m1.slope_index().zip(m1.slope_prior_density_at_zero());
    nested_bayes_factor(&m1, &m0, slope, sampler, method, seed)
}
