//! Workflow configuration: a plain-text file of `section.key = value` lines.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default; unknown keys and malformed values are rejected.

use std::fmt;
use std::path::Path;

use bfwork_core::decision::{default_threshold_grid, UtilitySpec};
use bfwork_core::design::{DesignSpec, SimTruth, VarComp};
use bfwork_core::fit::BfMethod;
use bfwork_core::inference::{ModelPrior, DEFAULT_SD_GRID};
use bfwork_core::marginal::DensityEstimator;
use bfwork_core::model::{HalfNormalPrior, LkjPrior, LmmModelSpec, NormalPrior, PriorSpec, RandomEffects};
use bfwork_core::sampler::SamplerConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "config line {l}: {}", self.message),
            None => write!(f, "config: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(message: impl Into<String>) -> ConfigError {
    ConfigError { line: None, message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSection {
    /// Draw generating parameters from the prior instead of using `truth`.
    pub from_prior: bool,
    pub subject: RandomEffects,
    pub item: RandomEffects,
    pub truth: SimTruth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SbcPipelineKind {
    Lmm,
    /// Normal observations with a normal prior on the mean; exact Bayes factors.
    Conjugate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionSection {
    pub utility: UtilitySpec,
    pub threshold: f64,
    pub grid: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
}

/// Every setting of a workflow run, with defaults filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowConfig {
    pub seed: u64,
    pub data_path: Option<String>,
    pub meta_path: Option<String>,
    pub prior: PriorSpec,
    pub model: LmmModelSpec,
    pub design: DesignSpec,
    pub sim: SimSection,
    pub sampler: SamplerConfig,
    pub method: BfMethod,
    pub repeats: usize,
    pub model_prior: ModelPrior,
    pub sbc_runs: usize,
    pub sbc_pipeline: SbcPipelineKind,
    pub sensitivity_grid: Vec<f64>,
    pub meta_grid: Vec<f64>,
    pub meta_tau_scale: f64,
    /// Posterior predictive datasets simulated by `fit`; 0 disables the check.
    pub ppc_datasets: usize,
    pub decision: DecisionSection,
}

impl Default for WorkflowConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            data_path: None,
            meta_path: None,
            prior: PriorSpec::calibration_default(),
            model: LmmModelSpec::maximal(false),
            design: DesignSpec::default(),
            sim: SimSection {
                from_prior: false,
                subject: RandomEffects::InterceptSlope,
                item: RandomEffects::None,
                truth: SimTruth {
                    beta0: 6.0,
                    beta1: -0.03,
                    subject: VarComp { sd0: 0.3, sd1: 0.05, rho: 0.0 },
                    item: Some(VarComp { sd0: 0.2, sd1: 0.05, rho: 0.0 }),
                    sigma: 0.4,
                    empirical: false,
                },
            },
            sampler: SamplerConfig::default(),
            method: BfMethod::Bridge,
            repeats: 4,
            model_prior: ModelPrior::even(),
            sbc_runs: 500,
            sbc_pipeline: SbcPipelineKind::Lmm,
            sensitivity_grid: DEFAULT_SD_GRID.to_vec(),
            meta_grid: DEFAULT_SD_GRID.to_vec(),
            meta_tau_scale: 0.5,
            ppc_datasets: 0,
            decision: DecisionSection {
                utility: UtilitySpec::default(),
                threshold: 10.0,
                grid: default_threshold_grid(),
                lo: 0.1,
                hi: 10.0,
            },
        }
    }
}

/// Every accepted key, in the order they are listed by `keys()`.
pub const KEYS: &[&str] = &[
    "run.seed",
    "data.path",
    "data.meta",
    "prior.intercept_mean",
    "prior.intercept_sd",
    "prior.slope_mean",
    "prior.slope_sd",
    "prior.sd_scale",
    "prior.sigma_scale",
    "prior.lkj_eta",
    "model.subject",
    "model.item",
    "design.subjects",
    "design.items",
    "design.replications",
    "sim.from_prior",
    "sim.subject",
    "sim.item",
    "sim.empirical",
    "sim.beta0",
    "sim.beta1",
    "sim.subj_sd0",
    "sim.subj_sd1",
    "sim.subj_rho",
    "sim.item_sd0",
    "sim.item_sd1",
    "sim.item_rho",
    "sim.sigma",
    "sampler.chains",
    "sampler.warmup",
    "sampler.iter",
    "sampler.adapt_delta",
    "sampler.max_treedepth",
    "bf.method",
    "bf.repeats",
    "hypothesis.p_h1",
    "sbc.runs",
    "sbc.pipeline",
    "sensitivity.grid",
    "meta.grid",
    "meta.tau_scale",
    "fit.ppc_datasets",
    "decision.u_true_discovery",
    "decision.u_false_discovery",
    "decision.u_true_rejection",
    "decision.u_false_rejection",
    "decision.threshold",
    "decision.grid",
    "decision.lo",
    "decision.hi",
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| err(format!("invalid value {v:?} for {key}")))
}

fn flag(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(err(format!("invalid value {v:?} for {key}, expected true or false"))),
    }
}

fn effects(key: &str, v: &str) -> Result<RandomEffects, ConfigError> {
    match v {
        "none" => Ok(RandomEffects::None),
        "intercept" => Ok(RandomEffects::Intercept),
        "intercept_slope" => Ok(RandomEffects::InterceptSlope),
        _ => Err(err(format!("invalid value {v:?} for {key}, expected none, intercept or intercept_slope"))),
    }
}

fn list(key: &str, v: &str) -> Result<Vec<f64>, ConfigError> {
    v.split(',').map(|s| num(key, s.trim())).collect()
}

fn method(key: &str, v: &str) -> Result<BfMethod, ConfigError> {
    match v {
        "bridge" => Ok(BfMethod::Bridge),
        "savage_dickey" | "savage_dickey_normal" => Ok(BfMethod::SavageDickey(DensityEstimator::NormalApprox)),
        "savage_dickey_kde" => Ok(BfMethod::SavageDickey(DensityEstimator::Kde)),
        _ => Err(err(format!(
            "invalid value {v:?} for {key}, expected bridge, savage_dickey_normal or savage_dickey_kde"
        ))),
    }
}

impl WorkflowConfig {
    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        match key {
            "run.seed" => self.seed = num(key, v)?,
            "data.path" => self.data_path = Some(v.to_string()),
            "data.meta" => self.meta_path = Some(v.to_string()),
            "prior.intercept_mean" => self.prior.intercept.mean = num(key, v)?,
            "prior.intercept_sd" => self.prior.intercept.sd = num(key, v)?,
            "prior.slope_mean" => {
                let sd = self.prior.slope.map_or(1.0, |s| s.sd);
                self.prior.slope = Some(NormalPrior::new(num(key, v)?, sd));
            }
            "prior.slope_sd" => {
                let mean = self.prior.slope.map_or(0.0, |s| s.mean);
                self.prior.slope = Some(NormalPrior::new(mean, num(key, v)?));
            }
            "prior.sd_scale" => self.prior.sd = HalfNormalPrior::new(num(key, v)?),
            "prior.sigma_scale" => self.prior.sigma = HalfNormalPrior::new(num(key, v)?),
            "prior.lkj_eta" => self.prior.correlation = LkjPrior::new(num(key, v)?),
            "model.subject" => self.model.subject = effects(key, v)?,
            "model.item" => self.model.item = effects(key, v)?,
            "design.subjects" => self.design.n_subjects = num(key, v)?,
            "design.items" => self.design.n_items = num(key, v)?,
            "design.replications" => self.design.replications = num(key, v)?,
            "sim.from_prior" => self.sim.from_prior = flag(key, v)?,
            "sim.subject" => self.sim.subject = effects(key, v)?,
            "sim.item" => self.sim.item = effects(key, v)?,
            "sim.empirical" => self.sim.truth.empirical = flag(key, v)?,
            "sim.beta0" => self.sim.truth.beta0 = num(key, v)?,
            "sim.beta1" => self.sim.truth.beta1 = num(key, v)?,
            "sim.subj_sd0" => self.sim.truth.subject.sd0 = num(key, v)?,
            "sim.subj_sd1" => self.sim.truth.subject.sd1 = num(key, v)?,
            "sim.subj_rho" => self.sim.truth.subject.rho = num(key, v)?,
            "sim.item_sd0" => self.item_truth().sd0 = num(key, v)?,
            "sim.item_sd1" => self.item_truth().sd1 = num(key, v)?,
            "sim.item_rho" => self.item_truth().rho = num(key, v)?,
            "sim.sigma" => self.sim.truth.sigma = num(key, v)?,
            "sampler.chains" => self.sampler.n_chains = num(key, v)?,
            "sampler.warmup" => self.sampler.warmup = num(key, v)?,
            "sampler.iter" => self.sampler.iter = num(key, v)?,
            "sampler.adapt_delta" => self.sampler.target_accept = num(key, v)?,
            "sampler.max_treedepth" => self.sampler.max_tree_depth = num(key, v)?,
            "bf.method" => self.method = method(key, v)?,
            "bf.repeats" => self.repeats = num(key, v)?,
            "hypothesis.p_h1" => {
                let p: f64 = num(key, v)?;
                self.model_prior = ModelPrior::with_p_h1(p).map_err(|e| err(format!("{key}: {e}")))?;
            }
            "sbc.runs" => self.sbc_runs = num(key, v)?,
            "sbc.pipeline" => {
                self.sbc_pipeline = match v {
                    "lmm" => SbcPipelineKind::Lmm,
                    "conjugate" => SbcPipelineKind::Conjugate,
                    _ => return Err(err(format!("invalid value {v:?} for {key}, expected lmm or conjugate"))),
                }
            }
            "sensitivity.grid" => self.sensitivity_grid = list(key, v)?,
            "meta.grid" => self.meta_grid = list(key, v)?,
            "meta.tau_scale" => self.meta_tau_scale = num(key, v)?,
            "fit.ppc_datasets" => self.ppc_datasets = num(key, v)?,
            "decision.u_true_discovery" => self.decision.utility.true_discovery = num(key, v)?,
            "decision.u_false_discovery" => self.decision.utility.false_discovery = num(key, v)?,
            "decision.u_true_rejection" => self.decision.utility.true_rejection = num(key, v)?,
            "decision.u_false_rejection" => self.decision.utility.false_rejection = num(key, v)?,
            "decision.threshold" => self.decision.threshold = num(key, v)?,
            "decision.grid" => self.decision.grid = list(key, v)?,
            "decision.lo" => self.decision.lo = num(key, v)?,
            "decision.hi" => self.decision.hi = num(key, v)?,
            _ => {
                let section = key.split('.').next().unwrap_or_default();
                let known: Vec<&str> = KEYS.iter().copied().filter(|k| k.split('.').next() == Some(section)).collect();
                return Err(err(if known.is_empty() {
                    format!("unknown key {key:?}")
                } else {
                    format!("unknown key {key:?}; known keys in [{section}]: {}", known.join(", "))
                }));
            }
        }
        Ok(())
    }

    fn item_truth(&mut self) -> &mut VarComp {
        self.sim.truth.item.get_or_insert(VarComp::zero())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let at = |mut e: ConfigError| {
                e.line = Some(i + 1);
                e
            };
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) =
                line.split_once('=').ok_or_else(|| at(err(format!("expected `key = value`, got {line:?}"))))?;
            let (key, value) = (key.trim(), value.trim());
            if !key.contains('.') {
                return Err(at(err(format!("key {key:?} must have the form section.key"))));
            }
            if !seen.insert(key.to_string()) {
                return Err(at(err(format!("duplicate key {key:?}"))));
            }
            cfg.set(key, value).map_err(at)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::Error::new(e).context(format!("reading config {}", path.display())))?;
        Ok(Self::parse(&text)?)
    }

    /// Checks settings that core routines would otherwise reject only late in a run.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.prior.validate().map_err(|e| err(e.to_string()))?;
        self.sampler.validate().map_err(|e| err(e.to_string()))?;
        self.decision.utility.validate().map_err(|e| err(e.to_string()))?;
        if self.repeats == 0 {
            return Err(err("bf.repeats must be at least 1"));
        }
        if self.sbc_runs == 0 {
            return Err(err("sbc.runs must be at least 1"));
        }
        if self.decision.threshold.is_nan() || self.decision.threshold <= 0.0 {
            return Err(err("decision.threshold must be positive"));
        }
        if self.model.subject == RandomEffects::None {
            return Err(err("model.subject must include random effects"));
        }
        Ok(())
    }

    /// The fitted alternative model.
    pub fn fit_spec(&self) -> LmmModelSpec {
        self.model.alternative()
    }

    /// The fixed generating parameters with effects absent from `sim.subject`
    /// and `sim.item` switched off.
    pub fn sim_truth(&self) -> SimTruth {
        let mask = |vc: VarComp, re: RandomEffects| match re {
            RandomEffects::None => VarComp::zero(),
            RandomEffects::Intercept => VarComp { sd1: 0.0, rho: 0.0, ..vc },
            RandomEffects::InterceptSlope => vc,
        };
        let mut t = self.sim.truth;
        t.subject = mask(t.subject, self.sim.subject);
        t.item = match (t.item, self.sim.item) {
            (_, RandomEffects::None) | (None, _) => None,
            (Some(vc), re) => Some(mask(vc, re)),
        };
        t
    }

    /// The simulation random-effect structure as a model spec.
    pub fn sim_spec(&self) -> LmmModelSpec {
        LmmModelSpec { include_slope: true, subject: self.sim.subject, item: self.sim.item }
    }
}
