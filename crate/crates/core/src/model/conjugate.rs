use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::LogDensity;
use crate::math::{normal_lpdf, LN_SQRT_2PI};
use crate::rng::EngineRng;

/// Normal observations with known SD and a normal prior on their mean:
/// `y_i ~ N(mu, sigma^2)`, `mu ~ N(mu0, tau^2)`.
///
/// Every quantity of interest has a closed form, which makes this the reference
/// model for checking marginal-likelihood estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjugateModel {
    pub mu0: f64,
    pub tau: f64,
    pub sigma: f64,
    pub y: Vec<f64>,
}

impl ConjugateModel {
    pub fn new(mu0: f64, tau: f64, sigma: f64, y: Vec<f64>) -> Self {
        Self { mu0, tau, sigma, y }
    }

    /// The nested null model with `mu` fixed at zero.
    pub fn null(&self) -> Self {
        Self { mu0: 0.0, tau: 0.0, ..self.clone() }
    }

    /// Log density of `y` under `N(mu0 1, sigma^2 I + tau^2 J)`, via the rank-one
    /// Woodbury identity.
    pub fn analytic_log_marginal(&self) -> f64 {
        let n = self.y.len();
        if n == 0 {
            return 0.0;
        }
        let nf = n as f64;
        let s2 = self.sigma * self.sigma;
        let t2 = self.tau * self.tau;
        let (mut sum_d, mut sum_d2) = (0.0, 0.0);
        for y in &self.y {
            let d = y - self.mu0;
            sum_d += d;
            sum_d2 += d * d;
        }
        let quad = (sum_d2 - t2 * sum_d * sum_d / (s2 + nf * t2)) / s2;
        let logdet = 2.0 * nf * self.sigma.ln() + (nf * t2 / s2).ln_1p();
        -nf * LN_SQRT_2PI - 0.5 * logdet - 0.5 * quad
    }

    /// Posterior mean and variance of `mu`.
    pub fn posterior(&self) -> (f64, f64) {
        let prec = 1.0 / (self.tau * self.tau) + self.y.len() as f64 / (self.sigma * self.sigma);
        let v = 1.0 / prec;
        let m = v * (self.mu0 / (self.tau * self.tau) + self.y.iter().sum::<f64>() / (self.sigma * self.sigma));
        (m, v)
    }

    /// Savage–Dickey ratio posterior density over prior density at `mu = 0`.
    pub fn analytic_savage_dickey_bf01(&self) -> f64 {
        let (m, v) = self.posterior();
        (normal_lpdf(0.0, m, v.sqrt()) - normal_lpdf(0.0, self.mu0, self.tau)).exp()
    }

    pub fn log_likelihood(&self, mu: f64) -> f64 {
        self.y.iter().map(|y| normal_lpdf(*y, mu, self.sigma)).sum()
    }
}

/// With `tau = 0` the model has no free parameters and `dim()` is zero; the
/// density is then the likelihood at `mu0`.
impl LogDensity for ConjugateModel {
    fn dim(&self) -> usize {
        if self.tau > 0.0 {
            1
        } else {
            0
        }
    }

    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        if self.tau <= 0.0 {
            return self.log_likelihood(self.mu0);
        }
        let mu = theta[0];
        let s2 = self.sigma * self.sigma;
        let t2 = self.tau * self.tau;
        let dlik: f64 = self.y.iter().map(|y| (y - mu) / s2).sum();
        grad[0] = dlik - (mu - self.mu0) / t2;
        self.log_likelihood(mu) + normal_lpdf(mu, self.mu0, self.tau)
    }

    fn initial_point(&self, rng: &mut EngineRng) -> Vec<f64> {
        if self.tau <= 0.0 {
            return Vec::new();
        }
        let z: f64 = rng.sample(StandardNormal);
        vec![self.mu0 + self.tau * z]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::log_sum_exp;
    use crate::rng::stream;

    fn fixed_y(n: usize) -> Vec<f64> {
        let mut rng = stream(2024, "conjugate-y", 0);
        (0..n).map(|_| 0.3 + rng.sample::<f64, _>(StandardNormal)).collect()
    }

    #[test]
    fn single_point_marginal() {
        let m = ConjugateModel::new(0.0, 1.0, 1.0, vec![0.0]);
        let want = -0.5 * (4.0 * std::f64::consts::PI).ln();
        assert!((m.analytic_log_marginal() - want).abs() < 1e-12);
        assert!((want + 1.26551).abs() < 1e-5);
    }

    #[test]
    fn zero_tau_is_iid_likelihood() {
        let y = fixed_y(7);
        let m = ConjugateModel::new(0.4, 0.0, 1.3, y);
        assert!((m.analytic_log_marginal() - m.log_likelihood(0.4)).abs() < 1e-12);
    }

    #[test]
    fn empty_data_has_zero_log_marginal() {
        assert_eq!(ConjugateModel::new(0.0, 1.0, 1.0, vec![]).analytic_log_marginal(), 0.0);
        assert!((ConjugateModel::new(0.0, 1.0, 1.0, vec![]).analytic_savage_dickey_bf01() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn marginal_matches_quadrature() {
        let m = ConjugateModel::new(0.0, 1.0, 1.0, fixed_y(10));
        let (pm, pv) = m.posterior();
        let half = 12.0 * pv.sqrt();
        let n = 1_000_000;
        let h = 2.0 * half / n as f64;
        let vals: Vec<f64> = (0..=n)
            .map(|i| {
                let mu = pm - half + i as f64 * h;
                let w: f64 = if i == 0 || i == n { 0.5 } else { 1.0 };
                w.ln() + m.log_likelihood(mu) + normal_lpdf(mu, m.mu0, m.tau)
            })
            .collect();
        let quad = log_sum_exp(&vals) + h.ln();
        assert!((quad - m.analytic_log_marginal()).abs() < 1e-6);
    }

    #[test]
    fn savage_dickey_density_ratio() {
        // posterior N(0, 0.5^2) against prior N(0, 1): ratio 2
        // tau = 1, sigma = 1, three observations summing to zero give v = 1/4
        let m = ConjugateModel::new(0.0, 1.0, 1.0, vec![-1.0, 0.5, 0.5]);
        let (pm, pv) = m.posterior();
        assert!(pm.abs() < 1e-15 && (pv - 0.25).abs() < 1e-15);
        assert!((m.analytic_savage_dickey_bf01() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn savage_dickey_identity() {
        for n in [1, 5, 10, 40] {
            let m = ConjugateModel::new(0.0, 0.7, 1.2, fixed_y(n));
            let lbf01 = m.null().analytic_log_marginal() - m.analytic_log_marginal();
            assert!((m.analytic_savage_dickey_bf01().ln() - lbf01).abs() < 1e-10);
        }
    }

    #[test]
    fn gradient() {
        let m = ConjugateModel::new(0.2, 0.8, 1.1, fixed_y(10));
        let mut g = [0.0];
        let mut s = [0.0];
        for mu in [-1.0, 0.0, 0.7] {
            m.log_density_grad(&[mu], &mut g);
            let h = 1e-6;
            let fd = (m.log_density_grad(&[mu + h], &mut s) - m.log_density_grad(&[mu - h], &mut s)) / (2.0 * h);
            assert!((fd - g[0]).abs() < 1e-6);
        }
    }
}
