use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::PipelineOutput;
use crate::design::{generate_design, sim_lmm_with, DesignSpec, SimTruth};
use crate::error::{structural, Result};
use crate::fit::{lmm_bayes_factor, nested_bayes_factor, BfMethod, NestedBf};
use crate::inference::Hypothesis;
use crate::math::normal_lpdf;
use crate::model::{ConjugateModel, DesignRow, LmmModelSpec, PriorSpec, RandomEffects};
use crate::rng::EngineRng;
use crate::sampler::SamplerConfig;

/// Simulates one dataset under a given truth and estimates its Bayes factor.
///
/// Implementations must draw everything random from `rng` and seed any fitting
/// from `fit_seed`, so that a run depends only on its own inputs.
pub trait SbcPipeline: Sync {
    fn run(&self, truth: Hypothesis, rng: &mut EngineRng, fit_seed: u64) -> PipelineOutput;
}

fn output_from(params: BTreeMap<String, f64>, res: Result<NestedBf>) -> PipelineOutput {
    match res {
        Ok(nbf) => {
            let (rhat, div) = nbf.worst_diagnostics();
            PipelineOutput {
                params,
                log_bf10: (!nbf.bf.is_failure()).then_some(nbf.bf.log_bf10),
                failure: nbf.bf.failure.clone(),
                unstable: nbf.bf.unstable,
                max_rhat: (!rhat.is_nan()).then_some(rhat),
                divergences: div,
            }
        }
        Err(e) => PipelineOutput {
            params,
            log_bf10: None,
            failure: Some(e.to_string()),
            unstable: false,
            max_rhat: None,
            divergences: 0,
        },
    }
}

/// Mixed-model pipeline: parameters from the prior, data from the simulation
/// structure, Bayes factor from the fitted structure.
#[derive(Debug, Clone)]
pub struct LmmPipeline {
    design: Vec<DesignRow>,
    prior: PriorSpec,
    sim_spec: LmmModelSpec,
    fit_spec: LmmModelSpec,
    method: BfMethod,
    sampler: SamplerConfig,
}

impl LmmPipeline {
    pub fn new(
        design: DesignSpec,
        prior: PriorSpec,
        sim_spec: LmmModelSpec,
        fit_spec: LmmModelSpec,
        method: BfMethod,
        sampler: SamplerConfig,
    ) -> Result<Self> {
        prior.validate()?;
        sampler.validate()?;
        if prior.slope.is_none() {
            return Err(structural("calibration needs a prior on the slope"));
        }
        if sim_spec.subject == RandomEffects::None || fit_spec.subject == RandomEffects::None {
            return Err(structural("simulated and fitted models need by-subject random effects"));
        }
        if design.n_items == 0 && (sim_spec.item != RandomEffects::None || fit_spec.item != RandomEffects::None) {
            return Err(structural("item random effects need a design with items"));
        }
        let design = generate_design(&design)?;
        Ok(Self { design, prior, sim_spec, fit_spec: fit_spec.alternative(), method, sampler })
    }
}

fn truth_params(t: &SimTruth) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    m.insert("beta0".to_string(), t.beta0);
    m.insert("beta1".to_string(), t.beta1);
    m.insert("subj_sd0".to_string(), t.subject.sd0);
    m.insert("subj_sd1".to_string(), t.subject.sd1);
    m.insert("subj_rho".to_string(), t.subject.rho);
    if let Some(vc) = t.item {
        m.insert("item_sd0".to_string(), vc.sd0);
        m.insert("item_sd1".to_string(), vc.sd1);
        m.insert("item_rho".to_string(), vc.rho);
    }
    m.insert("sigma".to_string(), t.sigma);
    m
}

impl SbcPipeline for LmmPipeline {
    fn run(&self, truth: Hypothesis, rng: &mut EngineRng, fit_seed: u64) -> PipelineOutput {
        let t =
            SimTruth::from_prior(&self.prior, truth == Hypothesis::H1, self.sim_spec.subject, self.sim_spec.item, rng);
        let params = truth_params(&t);
        let res = sim_lmm_with(&self.design, &t, rng)
            .and_then(|data| lmm_bayes_factor(&data, self.fit_spec, &self.prior, &self.sampler, self.method, fit_seed));
        output_from(params, res)
    }
}

/// How the conjugate pipeline obtains its Bayes factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ConjugateMethod {
    /// Closed-form marginal likelihoods, no sampling.
    Analytic,
    Sampled {
        method: BfMethod,
        sampler: SamplerConfig,
    },
}

/// Normal observations with known SD: under H1 the mean is drawn from
/// `N(0, tau^2)`, under H0 it is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjugatePipeline {
    pub n_obs: usize,
    pub sigma: f64,
    pub tau: f64,
    pub method: ConjugateMethod,
}

impl Default for ConjugatePipeline {
    fn default() -> Self {
        Self { n_obs: 10, sigma: 1.0, tau: 1.0, method: ConjugateMethod::Analytic }
    }
}

impl SbcPipeline for ConjugatePipeline {
    fn run(&self, truth: Hypothesis, rng: &mut EngineRng, fit_seed: u64) -> PipelineOutput {
        let mu = match truth {
            Hypothesis::H1 => self.tau * rng.sample::<f64, _>(StandardNormal),
            Hypothesis::H0 => 0.0,
        };
        let y: Vec<f64> = (0..self.n_obs).map(|_| mu + self.sigma * rng.sample::<f64, _>(StandardNormal)).collect();
        let mut params = BTreeMap::new();
        params.insert("mu".to_string(), mu);
        let h1 = ConjugateModel::new(0.0, self.tau, self.sigma, y);
        let h0 = h1.null();
        match &self.method {
            ConjugateMethod::Analytic => {
                let log_bf = h1.analytic_log_marginal() - h0.analytic_log_marginal();
                PipelineOutput {
                    params,
                    log_bf10: Some(log_bf),
                    failure: None,
                    unstable: false,
                    max_rhat: None,
                    divergences: 0,
                }
            }
            ConjugateMethod::Sampled { method, sampler } => {
                let dens0 = normal_lpdf(0.0, 0.0, self.tau).exp();
                let res = nested_bayes_factor(&h1, &h0, Some((0, dens0)), sampler, *method, fit_seed);
                output_from(params, res)
            }
        }
    }
}

/// Returns the same Bayes factor for every dataset; a pipeline that learns
/// nothing from the data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantPipeline {
    pub log_bf10: f64,
}

impl SbcPipeline for ConstantPipeline {
    fn run(&self, _truth: Hypothesis, _rng: &mut EngineRng, _fit_seed: u64) -> PipelineOutput {
        PipelineOutput {
            params: BTreeMap::new(),
            log_bf10: Some(self.log_bf10),
            failure: None,
            unstable: false,
            max_rhat: None,
            divergences: 0,
        }
    }
}
