//! Turning Bayes factors into statements: posterior model probabilities,
//! verbal evidence categories, repeatability and prior sensitivity.

mod meta;
mod sensitivity;
mod stability;

pub use meta::{meta_analysis_bf, MetaInput, MetaModel, Study};
pub use sensitivity::{sensitivity_curve, ConjugateFamily, LmmFamily, SensitivityCurve, SlopeFamily, DEFAULT_SD_GRID};
pub use stability::{stability_check, stability_check_seeds, StabilityReport};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Hypothesis {
    H0,
    H1,
}

/// Prior probabilities of the null and the alternative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPrior {
    pub p_h0: f64,
    pub p_h1: f64,
}

impl ModelPrior {
    pub fn new(p_h0: f64, p_h1: f64) -> Result<Self> {
        if !(p_h0 >= 0.0 && p_h1 >= 0.0) || (p_h0 + p_h1 - 1.0).abs() > 1e-9 {
            return Err(domain(format!("model prior ({p_h0}, {p_h1}) must be nonnegative and sum to 1")));
        }
        Ok(Self { p_h0, p_h1 })
    }

    pub fn with_p_h1(p_h1: f64) -> Result<Self> {
        Self::new(1.0 - p_h1, p_h1)
    }

    pub fn even() -> Self {
        Self { p_h0: 0.5, p_h1: 0.5 }
    }

    pub fn is_degenerate(&self) -> bool {
        self.p_h0 == 0.0 || self.p_h1 == 0.0
    }
}

impl Default for ModelPrior {
    fn default() -> Self {
        Self::even()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorModelProbs {
    pub p_h0: f64,
    pub p_h1: f64,
    /// The prior put all mass on one model, so the data could not move it.
    pub degenerate_prior: bool,
}

/// Posterior model probabilities from `log BF10` and prior model probabilities,
/// computed in log space.
pub fn posterior_model_probs_log(log_bf10: f64, prior: &ModelPrior) -> PosteriorModelProbs {
    if prior.is_degenerate() {
        log::warn!("degenerate model prior ({}, {}); posterior equals prior", prior.p_h0, prior.p_h1);
        return PosteriorModelProbs { p_h0: prior.p_h0, p_h1: prior.p_h1, degenerate_prior: true };
    }
    let log_odds = log_bf10 + prior.p_h1.ln() - prior.p_h0.ln();
    // logistic function, written to stay accurate in both tails
    let p_h1 = if log_odds >= 0.0 { 1.0 / (1.0 + (-log_odds).exp()) } else { log_odds.exp() / (1.0 + log_odds.exp()) };
    let p_h0 =
        if log_odds >= 0.0 { (-log_odds).exp() / (1.0 + (-log_odds).exp()) } else { 1.0 / (1.0 + log_odds.exp()) };
    PosteriorModelProbs { p_h0, p_h1, degenerate_prior: false }
}

pub fn posterior_model_probs(bf10: f64, prior: &ModelPrior) -> Result<PosteriorModelProbs> {
    if !(bf10 > 0.0) || bf10.is_infinite() {
        return Err(domain(format!("Bayes factor must be positive and finite, got {bf10}")));
    }
    Ok(posterior_model_probs_log(bf10.ln(), prior))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strength {
    Anecdotal,
    Moderate,
    Strong,
    VeryStrong,
    Extreme,
}

/// Verbal category of a Bayes factor on Jeffreys' scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JeffreysLabel {
    NoChange,
    TowardsM1(Strength),
    TowardsM2(Strength),
}

impl JeffreysLabel {
    /// The category of the reciprocal Bayes factor.
    pub fn mirror(self) -> Self {
        match self {
            JeffreysLabel::NoChange => JeffreysLabel::NoChange,
            JeffreysLabel::TowardsM1(s) => JeffreysLabel::TowardsM2(s),
            JeffreysLabel::TowardsM2(s) => JeffreysLabel::TowardsM1(s),
        }
    }
}

impl fmt::Display for JeffreysLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (s, m) = match self {
            JeffreysLabel::NoChange => return f.write_str("No change in evidence"),
            JeffreysLabel::TowardsM1(s) => (s, "M1"),
            JeffreysLabel::TowardsM2(s) => (s, "M2"),
        };
        let word = match s {
            Strength::Anecdotal => "Anecdotal",
            Strength::Moderate => "Moderate",
            Strength::Strong => "Strong",
            Strength::VeryStrong => "Very strong",
            Strength::Extreme => "Extreme",
        };
        write!(f, "{word} change in evidence towards {m}")
    }
}

/// Jeffreys category of `bf12`; a value on a band boundary belongs to the stronger band.
pub fn jeffreys_label(bf12: f64) -> Result<JeffreysLabel> {
    if !(bf12 > 0.0) || bf12.is_infinite() {
        return Err(domain(format!("Bayes factor must be positive and finite, got {bf12}")));
    }
    if bf12 < 1.0 {
        return Ok(jeffreys_label(1.0 / bf12)?.mirror());
    }
    if bf12 == 1.0 {
        return Ok(JeffreysLabel::NoChange);
    }
    let s = match bf12 {
        b if b >= 100.0 => Strength::Extreme,
        b if b >= 30.0 => Strength::VeryStrong,
        b if b >= 10.0 => Strength::Strong,
        b if b >= 3.0 => Strength::Moderate,
        _ => Strength::Anecdotal,
    };
    Ok(JeffreysLabel::TowardsM1(s))
}

/// Fraction of draws strictly above zero.
pub fn prob_positive(draws: &[f64]) -> Result<f64> {
    if draws.is_empty() {
        return Err(crate::error::structural("no draws"));
    }
    Ok(draws.iter().filter(|d| **d > 0.0).count() as f64 / draws.len() as f64)
}
