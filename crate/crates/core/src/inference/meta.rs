use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::sensitivity::{sensitivity_curve, SensitivityCurve, SlopeFamily};
use crate::error::{domain, structural, Error, Result};
use crate::fit::{fit_model, seeded};
use crate::marginal::LogMlEstimate;
use crate::math::LN_SQRT_2PI;
use crate::model::{HalfNormalPrior, LogDensity, NormalPrior};
use crate::rng::EngineRng;
use crate::sampler::SamplerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study {
    pub expt: String,
    pub b: f64,
    pub se: f64,
}

/// Per-study effect estimates with standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaInput {
    pub studies: Vec<Study>,
}

impl MetaInput {
    pub fn new(studies: Vec<Study>) -> Result<Self> {
        for s in &studies {
            if !(s.se > 0.0 && s.se.is_finite()) {
                return Err(domain(format!("study {}: standard error must be positive, got {}", s.expt, s.se)));
            }
            if !s.b.is_finite() {
                return Err(domain(format!("study {}: estimate is not finite", s.expt)));
            }
        }
        Ok(Self { studies })
    }

    /// Reads a CSV with header `expt,b,SE`.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse(format!("missing column `{name}`")))
        };
        let (ie, ib, is) = (col("expt")?, col("b")?, col("SE")?);
        let mut studies = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let num = |i: usize, what: &str| -> Result<f64> {
                rec.get(i)
                    .unwrap_or("")
                    .parse()
                    .map_err(|_| Error::Parse(format!("line {}: bad {what} value", line + 2)))
            };
            studies.push(Study { expt: rec.get(ie).unwrap_or("").to_string(), b: num(ib, "b")?, se: num(is, "SE")? });
        }
        Self::new(studies)
    }

    pub fn read_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Random-effects meta-analysis with study effects integrated out:
/// `b_j ~ N(theta, SE_j^2 + tau^2)`, `tau ~ HalfNormal`, `theta ~ N` or fixed at 0.
///
/// Unconstrained parameters: `theta` (when free) then `log tau`.
#[derive(Debug, Clone)]
pub struct MetaModel {
    b: Vec<f64>,
    se2: Vec<f64>,
    theta_prior: Option<NormalPrior>,
    tau_prior: HalfNormalPrior,
}

impl MetaModel {
    pub fn new(meta: &MetaInput, theta_prior: Option<NormalPrior>, tau_prior: HalfNormalPrior) -> Self {
        Self {
            b: meta.studies.iter().map(|s| s.b).collect(),
            se2: meta.studies.iter().map(|s| s.se * s.se).collect(),
            theta_prior,
            tau_prior,
        }
    }
}

impl LogDensity for MetaModel {
    fn dim(&self) -> usize {
        1 + usize::from(self.theta_prior.is_some())
    }

    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let (mu, lt) = match self.theta_prior {
            Some(_) => (theta[0], theta[1]),
            None => (0.0, theta[0]),
        };
        let tau = lt.exp();
        let t2 = tau * tau;
        let mut lp = self.tau_prior.lpdf(tau) + lt;
        let mut g_lt = 1.0 - t2 / (self.tau_prior.scale * self.tau_prior.scale);
        let mut g_mu = 0.0;
        for (b, s2) in self.b.iter().zip(&self.se2) {
            let v = s2 + t2;
            let r = b - mu;
            lp += -0.5 * r * r / v - 0.5 * v.ln() - LN_SQRT_2PI;
            g_mu += r / v;
            g_lt += 2.0 * t2 * (0.5 * r * r / (v * v) - 0.5 / v);
        }
        match self.theta_prior {
            Some(p) => {
                lp += p.lpdf(mu);
                grad[0] = g_mu - (mu - p.mean) / (p.sd * p.sd);
                grad[1] = g_lt;
            }
            None => grad[0] = g_lt,
        }
        if lp.is_finite() {
            lp
        } else {
            f64::NEG_INFINITY
        }
    }

    fn initial_point(&self, rng: &mut EngineRng) -> Vec<f64> {
        let lt = self.tau_prior.sample(rng).max(1e-300).ln();
        match self.theta_prior {
            Some(p) => vec![p.sample(rng), lt],
            None => vec![lt],
        }
    }
}

struct MetaFamily<'a> {
    meta: &'a MetaInput,
    tau_prior: HalfNormalPrior,
    sampler: SamplerConfig,
}

impl SlopeFamily for MetaFamily<'_> {
    fn log_ml_null(&self, seed: u64) -> Result<LogMlEstimate> {
        let m = MetaModel::new(self.meta, None, self.tau_prior);
        let (s, b) = seeded(&self.sampler, seed, "h0");
        Ok(fit_model(&m, &s, Some(&b))?.log_ml.expect("bridge requested"))
    }

    fn log_ml_slope(&self, slope_sd: f64, seed: u64) -> Result<LogMlEstimate> {
        let m = MetaModel::new(self.meta, Some(NormalPrior::new(0.0, slope_sd)), self.tau_prior);
        let (s, b) = seeded(&self.sampler, seed, "h1");
        Ok(fit_model(&m, &s, Some(&b))?.log_ml.expect("bridge requested"))
    }
}

/// Bayes factor for a nonzero common effect across studies, over a grid of
/// prior SDs for that effect. The between-study SD has a half-normal prior
/// with scale `prior_sd_between`.
pub fn meta_analysis_bf(
    meta: &MetaInput,
    sd_grid: &[f64],
    prior_sd_between: f64,
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<SensitivityCurve> {
    if meta.studies.len() < 2 {
        return Err(structural(format!("meta-analysis needs at least two studies, got {}", meta.studies.len())));
    }
    if !(prior_sd_between > 0.0 && prior_sd_between.is_finite()) {
        return Err(domain("between-study SD prior scale must be positive"));
    }
    let fam = MetaFamily { meta, tau_prior: HalfNormalPrior::new(prior_sd_between), sampler: sampler.clone() };
    sensitivity_curve(&fam, sd_grid, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn input(bs: &[f64], se: f64) -> MetaInput {
        MetaInput::new(bs.iter().enumerate().map(|(i, &b)| Study { expt: i.to_string(), b, se }).collect()).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let meta = input(&[0.1, -0.2, 0.4], 0.2);
        for theta_prior in [Some(NormalPrior::new(0.0, 0.5)), None] {
            let m = MetaModel::new(&meta, theta_prior, HalfNormalPrior::new(0.5));
            let mut rng = stream(1, "meta-fd", 0);
            let mut g = vec![0.0; m.dim()];
            let mut s = vec![0.0; m.dim()];
            for _ in 0..50 {
                let th: Vec<f64> = (0..m.dim()).map(|_| rng.random_range(-2.0..1.0)).collect();
                m.log_density_grad(&th, &mut g);
                for j in 0..m.dim() {
                    let h = 1e-6;
                    let mut t = th.clone();
                    t[j] += h;
                    let fp = m.log_density_grad(&t, &mut s);
                    t[j] -= 2.0 * h;
                    let fm = m.log_density_grad(&t, &mut s);
                    let fd = (fp - fm) / (2.0 * h);
                    assert!((fd - g[j]).abs() / g[j].abs().max(1.0) < 1e-5);
                }
            }
        }
    }

    #[test]
    fn csv_input() {
        let text = "expt,b,SE\nA,0.1,0.05\nB,-0.02,0.03\n";
        let m = MetaInput::read_csv(text.as_bytes()).unwrap();
        assert_eq!(m.studies.len(), 2);
        assert_eq!(m.studies[1].se, 0.03);
        assert!(MetaInput::read_csv("expt,b,SE\nA,0.1,0\n".as_bytes()).is_err());
        assert!(MetaInput::read_csv("expt,b\nA,0.1\n".as_bytes()).is_err());
    }

    #[test]
    fn single_study_rejected() {
        let meta = input(&[0.1], 0.1);
        let r = meta_analysis_bf(&meta, &[0.1], 0.5, &SamplerConfig::default(), 0);
        assert!(matches!(r, Err(Error::Structural(_))));
    }
}
