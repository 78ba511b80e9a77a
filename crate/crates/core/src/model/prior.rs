use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;

use crate::error::{domain, Result};
use crate::math::normal_lpdf;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalPrior {
    pub mean: f64,
    pub sd: f64,
}

impl NormalPrior {
    pub fn new(mean: f64, sd: f64) -> Self {
        Self { mean, sd }
    }

    pub fn lpdf(&self, x: f64) -> f64 {
        normal_lpdf(x, self.mean, self.sd)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.mean + self.sd * z
    }
}

/// Normal(0, scale) truncated to the positive half-line, normalizing constant included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfNormalPrior {
    pub scale: f64,
}

impl HalfNormalPrior {
    pub fn new(scale: f64) -> Self {
        Self { scale }
    }

    pub fn lpdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return f64::NEG_INFINITY;
        }
        std::f64::consts::LN_2 + normal_lpdf(x, 0.0, self.scale)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.scale * z.abs()
    }
}

/// LKJ(eta) prior restricted to a 2x2 correlation matrix, i.e. a density on
/// the single correlation `rho`: `(rho + 1) / 2 ~ Beta(eta, eta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LkjPrior {
    pub eta: f64,
}

impl LkjPrior {
    pub fn new(eta: f64) -> Self {
        Self { eta }
    }

    /// Log normalizing constant `-ln B(eta, eta) - (2 eta - 1) ln 2`.
    pub fn log_norm(&self) -> f64 {
        -ln_beta(self.eta, self.eta) - (2.0 * self.eta - 1.0) * std::f64::consts::LN_2
    }

    pub fn lpdf(&self, rho: f64) -> f64 {
        if rho <= -1.0 || rho >= 1.0 {
            return f64::NEG_INFINITY;
        }
        (self.eta - 1.0) * (1.0 - rho * rho).ln() + self.log_norm()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let b = Beta::new(self.eta, self.eta).expect("eta validated positive");
        2.0 * b.sample(rng) - 1.0
    }
}

/// Prior distributions for every parameter class of the mixed model.
///
/// `slope` is `None` exactly for null models, which fix the population slope to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub intercept: NormalPrior,
    pub slope: Option<NormalPrior>,
    pub sd: HalfNormalPrior,
    pub sigma: HalfNormalPrior,
    pub correlation: LkjPrior,
}

impl PriorSpec {
    /// Priors of the small calibration study: intercept N(6, 0.5), slope N(0, 1),
    /// random-effect SDs half-N(1.5), residual SD half-N(0.5), LKJ(2).
    pub fn calibration_default() -> Self {
        Self {
            intercept: NormalPrior::new(6.0, 0.5),
            slope: Some(NormalPrior::new(0.0, 1.0)),
            sd: HalfNormalPrior::new(1.5),
            sigma: HalfNormalPrior::new(0.5),
            correlation: LkjPrior::new(2.0),
        }
    }

    /// Priors informed by the agreement-attraction meta analysis: slope N(-0.03, 0.009),
    /// random-effect SDs half-N(0.5), residual SD half-N(1).
    pub fn meta_informed() -> Self {
        Self {
            intercept: NormalPrior::new(6.0, 0.5),
            slope: Some(NormalPrior::new(-0.03, 0.009)),
            sd: HalfNormalPrior::new(0.5),
            sigma: HalfNormalPrior::new(1.0),
            correlation: LkjPrior::new(2.0),
        }
    }

    pub fn without_slope(mut self) -> Self {
        self.slope = None;
        self
    }

    pub fn with_slope(mut self, slope: NormalPrior) -> Self {
        self.slope = Some(slope);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64, what: &str| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(domain(format!("{what} must be positive and finite, got {v}")))
            }
        };
        pos(self.intercept.sd, "intercept prior sd")?;
        if let Some(s) = self.slope {
            pos(s.sd, "slope prior sd")?;
            if !s.mean.is_finite() {
                return Err(domain("slope prior mean must be finite"));
            }
        }
        if !self.intercept.mean.is_finite() {
            return Err(domain("intercept prior mean must be finite"));
        }
        pos(self.sd.scale, "random-effect sd prior scale")?;
        pos(self.sigma.scale, "residual sd prior scale")?;
        pos(self.correlation.eta, "LKJ eta")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = 0.5 * (f(a) + f(b));
        for i in 1..n {
            s += f(a + i as f64 * h);
        }
        s * h
    }

    #[test]
    fn densities_integrate_to_one() {
        for eta in [0.7, 1.0, 2.0, 4.5] {
            let lkj = LkjPrior::new(eta);
            let eps = 1e-9;
            let i = trapezoid(|r| lkj.lpdf(r).exp(), -1.0 + eps, 1.0 - eps, 400_000);
            let tol = if eta < 1.0 { 2e-3 } else { 1e-6 };
            assert!((i - 1.0).abs() < tol, "eta {eta}: {i}");
        }
        let hn = HalfNormalPrior::new(1.5);
        let i = trapezoid(|x| hn.lpdf(x).exp(), 0.0, 20.0, 200_000);
        assert!((i - 1.0).abs() < 1e-8);
    }

    #[test]
    fn lkj2_has_closed_form() {
        let lkj = LkjPrior::new(2.0);
        assert!((lkj.lpdf(0.3) - (0.75f64 * (1.0 - 0.09)).ln()).abs() < 1e-12);
    }

    #[test]
    fn samplers_match_moments() {
        let mut rng = stream(11, "prior-test", 0);
        let n = 100_000;
        let hn = HalfNormalPrior::new(2.0);
        let m = (0..n).map(|_| hn.sample(&mut rng)).sum::<f64>() / n as f64;
        // E|N(0, s)| = s sqrt(2/pi)
        assert!((m - 2.0 * (2.0 / std::f64::consts::PI).sqrt()).abs() < 0.02);
        let lkj = LkjPrior::new(2.0);
        let draws: Vec<f64> = (0..n).map(|_| lkj.sample(&mut rng)).collect();
        assert!(draws.iter().all(|r| r.abs() < 1.0));
        // Var(rho) = 1 / (2 eta + 1) for the 2x2 case
        let v = draws.iter().map(|r| r * r).sum::<f64>() / n as f64;
        assert!((v - 0.2).abs() < 0.005, "{v}");
    }

    #[test]
    fn validation() {
        assert!(PriorSpec::calibration_default().validate().is_ok());
        let mut p = PriorSpec::calibration_default();
        p.correlation.eta = 0.0;
        assert!(p.validate().is_err());
        let mut p = PriorSpec::calibration_default();
        p.sd.scale = -1.0;
        assert!(p.validate().is_err());
    }
}
