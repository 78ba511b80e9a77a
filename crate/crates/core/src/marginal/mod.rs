//! Marginal likelihoods and Bayes factors.

mod bridge;
mod savage_dickey;

pub use bridge::{bridge_log_ml, bridge_log_ml_with_proposal, BridgeConfig, MvNormal};
pub use savage_dickey::{savage_dickey_bf01, silverman_bandwidth, DensityEstimator};

use serde::{Deserialize, Serialize};

use crate::model::LogDensity;
use crate::sampler::ChainSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogMlMethod {
    Bridge,
    Analytic,
    SavageDickeyImplied,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogMlEstimate {
    pub log_ml: f64,
    pub n_iterations: usize,
    pub converged: bool,
    /// Approximate relative mean-squared error of `exp(log_ml)`.
    pub relative_mse_proxy: f64,
    pub method: LogMlMethod,
    /// Set when the estimate rests on too few draws to be trusted.
    pub low_draw_warning: bool,
}

impl LogMlEstimate {
    pub fn analytic(log_ml: f64) -> Self {
        Self {
            log_ml,
            n_iterations: 0,
            converged: true,
            relative_mse_proxy: 0.0,
            method: LogMlMethod::Analytic,
            low_draw_warning: false,
        }
    }

    pub fn is_stable(&self) -> bool {
        self.converged && !self.low_draw_warning && self.log_ml.is_finite()
    }
}

/// Marginal likelihood of a model: exact for models without free parameters,
/// bridge sampling from `chains` otherwise.
pub fn log_ml<M: LogDensity>(model: &M, chains: Option<&ChainSet>, cfg: &BridgeConfig) -> crate::Result<LogMlEstimate> {
    if model.dim() == 0 {
        return Ok(LogMlEstimate::analytic(model.log_density(&[])));
    }
    let chains = chains.ok_or_else(|| crate::error::structural("bridge sampling needs posterior draws"))?;
    bridge_log_ml(chains, model, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BfComponents {
    MarginalLikelihoods {
        h1: LogMlEstimate,
        h0: LogMlEstimate,
    },
    /// Log densities of the slope at zero under posterior and prior.
    DensityRatio {
        log_posterior_density: f64,
        log_prior_density: f64,
        estimator: DensityEstimator,
    },
    /// Closed form, no estimation involved.
    Exact,
}

/// Evidence ratio of H1 over H0. A non-finite log ratio is stored as a failure,
/// never as a value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesFactorEstimate {
    pub log_bf10: f64,
    pub components: BfComponents,
    pub unstable: bool,
    pub failure: Option<String>,
}

impl BayesFactorEstimate {
    pub fn from_log(log_bf10: f64, components: BfComponents, unstable: bool) -> Self {
        let failure = (!log_bf10.is_finite()).then(|| format!("non-finite log Bayes factor {log_bf10}"));
        Self { log_bf10, components, unstable, failure }
    }

    pub fn failed(reason: impl Into<String>) -> Self {
        Self { log_bf10: f64::NAN, components: BfComponents::Exact, unstable: true, failure: Some(reason.into()) }
    }

    pub fn is_failure(&self) -> bool {
        self.failure.is_some()
    }

    /// `exp(log_bf10)`, or `None` for failed estimates.
    pub fn bf10(&self) -> Option<f64> {
        if self.is_failure() {
            None
        } else {
            Some(self.log_bf10.exp())
        }
    }

    pub fn log10_bf10(&self) -> Option<f64> {
        (!self.is_failure()).then(|| self.log_bf10 / std::f64::consts::LN_10)
    }

    /// The same evidence expressed as H0 over H1.
    pub fn inverted(&self) -> Self {
        let components = match &self.components {
            BfComponents::MarginalLikelihoods { h1, h0 } => {
                BfComponents::MarginalLikelihoods { h1: h0.clone(), h0: h1.clone() }
            }
            other => other.clone(),
        };
        Self { log_bf10: -self.log_bf10, components, unstable: self.unstable, failure: self.failure.clone() }
    }
}

/// Bayes factor from the marginal likelihoods of H1 and H0.
pub fn bayes_factor(log_ml_1: &LogMlEstimate, log_ml_0: &LogMlEstimate) -> BayesFactorEstimate {
    let components = BfComponents::MarginalLikelihoods { h1: log_ml_1.clone(), h0: log_ml_0.clone() };
    if !log_ml_1.log_ml.is_finite() || !log_ml_0.log_ml.is_finite() {
        let mut out = BayesFactorEstimate::failed("a marginal likelihood estimate is not finite");
        out.components = components;
        return out;
    }
    let unstable = !log_ml_1.is_stable() || !log_ml_0.is_stable();
    BayesFactorEstimate::from_log(log_ml_1.log_ml - log_ml_0.log_ml, components, unstable)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic() {
        let a = LogMlEstimate::analytic(-10.0);
        let b = LogMlEstimate::analytic(-10.0 - 10f64.ln());
        assert_eq!(bayes_factor(&a, &a).bf10(), Some(1.0));
        assert!((bayes_factor(&a, &b).bf10().unwrap() - 10.0).abs() < 1e-12);
        let f = bayes_factor(&a, &b);
        assert_eq!(f.inverted().log_bf10, -f.log_bf10);
        assert_eq!(bayes_factor(&b, &a).log_bf10, -f.log_bf10);
    }

    #[test]
    fn failures_are_not_values() {
        let a = LogMlEstimate::analytic(f64::NAN);
        let b = LogMlEstimate::analytic(0.0);
        let bf = bayes_factor(&a, &b);
        assert!(bf.is_failure());
        assert_eq!(bf.bf10(), None);
        assert!(BayesFactorEstimate::from_log(f64::INFINITY, BfComponents::Exact, false).is_failure());
    }

    #[test]
    fn instability_propagates() {
        let a = LogMlEstimate { converged: false, ..LogMlEstimate::analytic(1.0) };
        let b = LogMlEstimate::analytic(0.0);
        assert!(bayes_factor(&a, &b).unstable);
        assert!(!bayes_factor(&b, &b).unstable);
    }
}
