use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{structural, Result};
use crate::fit::{fit_model, seeded};
use crate::io::fmt17;
use crate::marginal::{bayes_factor, BayesFactorEstimate, LogMlEstimate};
use crate::model::{ConjugateModel, Dataset, LmmModelSpec, LmmPosterior, NormalPrior, PriorSpec};
use crate::rng::derive_seed;
use crate::sampler::SamplerConfig;

/// Prior SDs of the slope from 0.005 to 0.4.
pub const DEFAULT_SD_GRID: [f64; 10] = [0.005, 0.01, 0.02, 0.03, 0.04, 0.05, 0.1, 0.2, 0.3, 0.4];

/// A nested pair of models in which the alternative has a zero-centered normal
/// prior of adjustable SD on one parameter.
pub trait SlopeFamily: Sync {
    fn log_ml_null(&self, seed: u64) -> Result<LogMlEstimate>;
    fn log_ml_slope(&self, slope_sd: f64, seed: u64) -> Result<LogMlEstimate>;
}

/// The mixed model on a dataset; both members are fitted and bridge sampled.
pub struct LmmFamily<'a> {
    pub data: &'a Dataset,
    pub spec: LmmModelSpec,
    pub prior: PriorSpec,
    pub sampler: SamplerConfig,
}

impl SlopeFamily for LmmFamily<'_> {
    fn log_ml_null(&self, seed: u64) -> Result<LogMlEstimate> {
        let m = LmmPosterior::new(self.data, self.spec.null(), self.prior)?;
        let (s, b) = seeded(&self.sampler, seed, "h0");
        Ok(fit_model(&m, &s, Some(&b))?.log_ml.expect("bridge requested"))
    }

    fn log_ml_slope(&self, slope_sd: f64, seed: u64) -> Result<LogMlEstimate> {
        let prior = self.prior.with_slope(NormalPrior::new(0.0, slope_sd));
        let m = LmmPosterior::new(self.data, self.spec.alternative(), prior)?;
        let (s, b) = seeded(&self.sampler, seed, "h1");
        Ok(fit_model(&m, &s, Some(&b))?.log_ml.expect("bridge requested"))
    }
}

/// The conjugate normal model: exact marginal likelihoods, or bridge sampling
/// when `sampler` is set.
pub struct ConjugateFamily {
    pub y: Vec<f64>,
    pub sigma: f64,
    pub sampler: Option<SamplerConfig>,
}

impl SlopeFamily for ConjugateFamily {
    fn log_ml_null(&self, _seed: u64) -> Result<LogMlEstimate> {
        Ok(LogMlEstimate::analytic(ConjugateModel::new(0.0, 0.0, self.sigma, self.y.clone()).analytic_log_marginal()))
    }

    fn log_ml_slope(&self, slope_sd: f64, seed: u64) -> Result<LogMlEstimate> {
        let m = ConjugateModel::new(0.0, slope_sd, self.sigma, self.y.clone());
        match &self.sampler {
            None => Ok(LogMlEstimate::analytic(m.analytic_log_marginal())),
            Some(cfg) => {
                let (s, b) = seeded(cfg, seed, "h1");
                Ok(fit_model(&m, &s, Some(&b))?.log_ml.expect("bridge requested"))
            }
        }
    }
}

/// Bayes factors over a grid of prior SDs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCurve {
    pub grid: Vec<f64>,
    pub estimates: Vec<BayesFactorEstimate>,
}

impl SensitivityCurve {
    pub fn bf10(&self) -> Vec<Option<f64>> {
        self.estimates.iter().map(|e| e.bf10()).collect()
    }

    pub fn stable(&self) -> Vec<bool> {
        self.estimates.iter().map(|e| !e.unstable && !e.is_failure()).collect()
    }

    /// CSV with header `prior_sd,bf10,log10_bf10,stable`; failed points have NaN values.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "prior_sd,bf10,log10_bf10,stable")?;
        for (sd, e) in self.grid.iter().zip(&self.estimates) {
            let bf = e.bf10().unwrap_or(f64::NAN);
            let l10 = e.log10_bf10().unwrap_or(f64::NAN);
            writeln!(w, "{},{},{},{}", fmt17(*sd), fmt17(bf), fmt17(l10), !e.unstable && !e.is_failure())?;
        }
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(f)
    }
}

pub(crate) fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(structural("grid is empty"));
    }
    if grid.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
        return Err(structural("grid values must be positive and finite"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(structural("grid must be strictly increasing"));
    }
    Ok(())
}

/// One null fit shared by every grid point, and one alternative fit per prior SD.
/// Grid points that fail are recorded as failures; the curve is still returned.
pub fn sensitivity_curve<F: SlopeFamily>(family: &F, grid: &[f64], seed: u64) -> Result<SensitivityCurve> {
    check_grid(grid)?;
    let null = family.log_ml_null(derive_seed(seed, "sensitivity-null", 0))?;
    let estimates = grid
        .par_iter()
        .enumerate()
        .map(|(i, &sd)| match family.log_ml_slope(sd, derive_seed(seed, "sensitivity", i as u64)) {
            Ok(alt) => bayes_factor(&alt, &null),
            Err(e) => BayesFactorEstimate::failed(e.to_string()),
        })
        .collect();
    Ok(SensitivityCurve { grid: grid.to_vec(), estimates })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_validation() {
        assert!(check_grid(&DEFAULT_SD_GRID).is_ok());
        assert!(check_grid(&[]).is_err());
        assert!(check_grid(&[0.1, 0.1]).is_err());
        assert!(check_grid(&[-0.1, 0.1]).is_err());
    }

    #[test]
    fn conjugate_limit_and_occam() {
        let y = vec![0.1, -0.3, 0.2, 0.05, -0.1, 0.0, 0.15, -0.2];
        let fam = ConjugateFamily { y, sigma: 1.0, sampler: None };
        let tiny = sensitivity_curve(&fam, &[1e-4], 0).unwrap();
        assert!(tiny.estimates[0].log_bf10.abs() < 0.05);
        let curve = sensitivity_curve(&fam, &DEFAULT_SD_GRID, 0).unwrap();
        let b = curve.bf10();
        assert!(b.windows(2).skip(1).all(|w| w[1].unwrap() < w[0].unwrap()));
    }

    #[test]
    fn csv_layout() {
        let fam = ConjugateFamily { y: vec![0.5, 0.7], sigma: 1.0, sampler: None };
        let curve = sensitivity_curve(&fam, &[0.1, 0.2], 0).unwrap();
        let mut out = Vec::new();
        curve.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "prior_sd,bf10,log10_bf10,stable");
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(fields[0].parse::<f64>().unwrap(), 0.1);
        assert_eq!(fields[1].parse::<f64>().unwrap(), curve.bf10()[0].unwrap());
        assert_eq!(fields[3], "true");
    }
}
