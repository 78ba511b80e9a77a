//! Simulation-based calibration of Bayes factors over the two-model space
//! {H0, H1}, and prior/posterior predictive checks.
//!
//! Each run draws a hypothesis from the model prior, draws parameters from
//! their prior under that hypothesis, simulates a dataset, and estimates the
//! Bayes factor. If the estimates are accurate, posterior model probabilities
//! averaged over runs recover the prior model probabilities.

mod pipeline;
mod predictive;

pub use pipeline::{ConjugateMethod, ConjugatePipeline, ConstantPipeline, LmmPipeline, SbcPipeline};
pub use predictive::{
    predictive_check, BandLevels, DatasetStats, PredictiveSource, PredictiveSummary, HIST_BINS, HIST_MAX_MS,
};

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::DesignSpec;
use crate::error::{structural, Error, Result};
use crate::fit::BfMethod;
use crate::inference::{posterior_model_probs_log, Hypothesis, ModelPrior};
use crate::io::fmt17;
use crate::math::{wilson_interval, Z_95};
use crate::model::{LmmModelSpec, PriorSpec};
use crate::rng::{derive_seed, stream};
use crate::sampler::SamplerConfig;

/// Runs with more failures than this fraction make an ensemble invalid.
pub const MAX_FAILURE_FRACTION: f64 = 0.2;

/// Minimum number of successful runs for a prior-recovery verdict.
pub const MIN_RECOVERY_RUNS: usize = 50;

/// Settings of a calibration ensemble for the mixed model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbcConfig {
    pub n_runs: usize,
    pub model_prior: ModelPrior,
    pub design: DesignSpec,
    pub param_prior: PriorSpec,
    /// Random-effect structure used to simulate data. `include_slope` is ignored;
    /// the truth decides whether the population slope is zero.
    pub sim_spec: LmmModelSpec,
    /// Alternative model that is fitted; the null is `fit_spec.null()`.
    pub fit_spec: LmmModelSpec,
    pub method: BfMethod,
    pub sampler: SamplerConfig,
    pub seed: u64,
}

impl Default for SbcConfig {
    fn default() -> Self {
        Self {
            n_runs: 500,
            model_prior: ModelPrior::even(),
            design: DesignSpec::default(),
            param_prior: PriorSpec::calibration_default(),
            sim_spec: LmmModelSpec::maximal(false),
            fit_spec: LmmModelSpec::maximal(false),
            method: BfMethod::Bridge,
            sampler: SamplerConfig::default(),
            seed: 1,
        }
    }
}

impl SbcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_runs == 0 {
            return Err(structural("an ensemble needs at least one run"));
        }
        ModelPrior::new(self.model_prior.p_h0, self.model_prior.p_h1)?;
        self.pipeline()?;
        Ok(())
    }

    pub fn pipeline(&self) -> Result<LmmPipeline> {
        LmmPipeline::new(
            self.design.clone(),
            self.param_prior,
            self.sim_spec,
            self.fit_spec,
            self.method,
            self.sampler.clone(),
        )
    }
}

/// One calibration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbcRun {
    pub index: usize,
    /// Prior probability of H1 the truth was drawn from.
    pub prior_p_h1: f64,
    pub truth: Hypothesis,
    /// Generating parameter values by name.
    pub params: BTreeMap<String, f64>,
    pub log_bf10: Option<f64>,
    pub p_h1_post: Option<f64>,
    pub failure: Option<String>,
    /// The estimator flagged its own result as unreliable.
    pub unstable: bool,
    pub max_rhat: Option<f64>,
    pub divergences: usize,
}

impl SbcRun {
    pub fn bf10(&self) -> Option<f64> {
        self.log_bf10.map(f64::exp)
    }

    pub fn is_success(&self) -> bool {
        self.p_h1_post.is_some()
    }

    /// R-hat above 1.01 or any divergent transition.
    pub fn diagnostics_warning(&self) -> bool {
        self.max_rhat.is_some_and(|r| r > 1.01) || self.divergences > 0
    }
}

/// What a pipeline reports for one simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub params: BTreeMap<String, f64>,
    pub log_bf10: Option<f64>,
    pub failure: Option<String>,
    pub unstable: bool,
    pub max_rhat: Option<f64>,
    pub divergences: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbcEnsemble {
    pub seed: u64,
    /// Set when the ensemble was produced by [`run_sbc`].
    pub config: Option<SbcConfig>,
    /// Sorted by run index.
    pub runs: Vec<SbcRun>,
}

impl SbcEnsemble {
    pub fn successes(&self) -> impl Iterator<Item = &SbcRun> {
        self.runs.iter().filter(|r| r.is_success())
    }

    pub fn n_failures(&self) -> usize {
        self.runs.len() - self.successes().count()
    }

    pub fn failure_fraction(&self) -> f64 {
        if self.runs.is_empty() {
            return 0.0;
        }
        self.n_failures() as f64 / self.runs.len() as f64
    }

    pub fn is_valid(&self) -> bool {
        self.failure_fraction() <= MAX_FAILURE_FRACTION
    }

    pub fn truths(&self) -> Vec<Hypothesis> {
        self.runs.iter().map(|r| r.truth).collect()
    }

    pub fn bf10s(&self) -> Vec<Option<f64>> {
        self.runs.iter().map(|r| r.bf10()).collect()
    }

    /// One JSON object per line, one line per run.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.runs {
            serde_json::to_writer(&mut w, r).map_err(|e| Error::Parse(e.to_string()))?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn write_jsonl_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path.as_ref())?;
        let mut w = std::io::BufWriter::new(f);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Reads runs written by [`SbcEnsemble::write_jsonl`]. Blank lines are skipped.
    pub fn read_jsonl<R: BufRead>(r: R, seed: u64) -> Result<Self> {
        let mut runs = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let run: SbcRun = serde_json::from_str(&line).map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?;
            runs.push(run);
        }
        runs.sort_by_key(|r| r.index);
        Ok(Self { seed, config: None, runs })
    }

    pub fn read_jsonl_path(path: impl AsRef<Path>, seed: u64) -> Result<Self> {
        let f = std::fs::File::open(path.as_ref())?;
        Self::read_jsonl(std::io::BufReader::new(f), seed)
    }
}

/// Runs the mixed-model calibration ensemble described by `config`.
pub fn run_sbc(config: &SbcConfig) -> Result<SbcEnsemble> {
    config.validate()?;
    let pipeline = config.pipeline()?;
    let priors = vec![config.model_prior; config.n_runs];
    let mut ens = run_sbc_with_priors(&pipeline, &priors, config.seed)?;
    ens.config = Some(config.clone());
    Ok(ens)
}

/// Runs `n_runs` calibration runs of `pipeline` under one model prior.
pub fn run_sbc_with<P: SbcPipeline>(pipeline: &P, n_runs: usize, prior: ModelPrior, seed: u64) -> Result<SbcEnsemble> {
    if n_runs == 0 {
        return Err(structural("an ensemble needs at least one run"));
    }
    run_sbc_with_priors(pipeline, &vec![prior; n_runs], seed)
}

/// One run per entry of `priors`, each drawing its truth from its own model prior.
/// Runs execute in parallel; the result does not depend on the number of workers.
pub fn run_sbc_with_priors<P: SbcPipeline>(pipeline: &P, priors: &[ModelPrior], seed: u64) -> Result<SbcEnsemble> {
    for p in priors {
        ModelPrior::new(p.p_h0, p.p_h1)?;
    }
    let runs: Vec<SbcRun> = priors
        .par_iter()
        .enumerate()
        .map(|(i, prior)| {
            let mut rng = stream(seed, "sbc-run", i as u64);
            let u: f64 = rng.random();
            let truth = if u >= prior.p_h0 { Hypothesis::H1 } else { Hypothesis::H0 };
            let out = pipeline.run(truth, &mut rng, derive_seed(seed, "sbc-fit", i as u64));
            let p_h1_post = match (out.log_bf10, &out.failure) {
                (Some(l), None) if !l.is_nan() => Some(posterior_model_probs_log(l, prior).p_h1),
                _ => None,
            };
            let failure = match (&out.failure, p_h1_post) {
                (Some(f), _) => Some(f.clone()),
                (None, None) => Some("Bayes factor is not a number".to_string()),
                (None, Some(_)) => None,
            };
            if let Some(f) = &failure {
                log::warn!("calibration run {i} failed: {f}");
            }
            SbcRun {
                index: i,
                prior_p_h1: prior.p_h1,
                truth,
                params: out.params,
                log_bf10: out.log_bf10.filter(|_| failure.is_none()),
                p_h1_post,
                failure,
                unstable: out.unstable,
                max_rhat: out.max_rhat,
                divergences: out.divergences,
            }
        })
        .collect();
    let ens = SbcEnsemble { seed, config: None, runs };
    if !ens.is_valid() {
        log::warn!("{} of {} calibration runs failed; the ensemble is invalid", ens.n_failures(), ens.runs.len());
    }
    Ok(ens)
}

/// Mean posterior probability of H1 with a 95% Wilson interval, and whether
/// the interval contains the prior probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorRecovery {
    pub n: usize,
    pub prior_p_h1: f64,
    pub mean_p_h1: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub pass: bool,
}

impl PriorRecovery {
    /// Half-width of the interval, the smallest miscalibration the ensemble can resolve.
    pub fn resolution(&self) -> f64 {
        0.5 * (self.ci_high - self.ci_low)
    }

    /// `1` when the mean exceeds the prior beyond the interval, `-1` when below, `0` on a pass.
    pub fn direction(&self) -> i8 {
        if self.ci_low > self.prior_p_h1 {
            1
        } else if self.ci_high < self.prior_p_h1 {
            -1
        } else {
            0
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "n,prior_p_h1,mean_p_h1,ci_low,ci_high,pass")?;
        writeln!(
            w,
            "{},{},{},{},{},{}",
            self.n,
            fmt17(self.prior_p_h1),
            fmt17(self.mean_p_h1),
            fmt17(self.ci_low),
            fmt17(self.ci_high),
            self.pass
        )?;
        Ok(())
    }
}

/// Checks that successful runs recover the prior probability of H1. All runs
/// must share one model prior.
pub fn sbc_prior_recovery(ens: &SbcEnsemble) -> Result<PriorRecovery> {
    let ok: Vec<&SbcRun> = ens.successes().collect();
    if ok.len() < MIN_RECOVERY_RUNS {
        return Err(structural(format!(
            "prior recovery needs at least {MIN_RECOVERY_RUNS} successful runs, got {}",
            ok.len()
        )));
    }
    let prior = ok[0].prior_p_h1;
    if ok.iter().any(|r| r.prior_p_h1 != prior) {
        return Err(structural("prior recovery needs a single model prior; use a prior sweep instead"));
    }
    let n = ok.len();
    let mean = ok.iter().map(|r| r.p_h1_post.unwrap_or(f64::NAN)).sum::<f64>() / n as f64;
    let (lo, hi) = wilson_interval(mean, n, Z_95);
    Ok(PriorRecovery {
        n,
        prior_p_h1: prior,
        mean_p_h1: mean,
        ci_low: lo,
        ci_high: hi,
        pass: lo <= prior && prior <= hi,
    })
}

/// Average posterior model probabilities, in percent, among runs with one true hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub n: usize,
    pub p_h0: f64,
    pub p_h1: f64,
    /// 95% Wilson interval for the mean probability of the true hypothesis, in percent.
    pub correct_ci: (f64, f64),
}

impl TruthRow {
    /// Average posterior probability of the true hypothesis, in percent.
    pub fn correct(&self, truth: Hypothesis) -> f64 {
        match truth {
            Hypothesis::H0 => self.p_h0,
            Hypothesis::H1 => self.p_h1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthTable {
    /// `None` when no successful run had this truth.
    pub h0: Option<TruthRow>,
    pub h1: Option<TruthRow>,
}

impl TruthTable {
    pub fn row(&self, truth: Hypothesis) -> Option<&TruthRow> {
        match truth {
            Hypothesis::H0 => self.h0.as_ref(),
            Hypothesis::H1 => self.h1.as_ref(),
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "truth,n,p_h0,p_h1")?;
        for (name, row) in [("H0", self.h0), ("H1", self.h1)] {
            match row {
                Some(r) => writeln!(w, "{name},{},{},{}", r.n, fmt17(r.p_h0), fmt17(r.p_h1))?,
                None => writeln!(w, "{name},0,,")?,
            }
        }
        Ok(())
    }
}

pub fn sbc_truth_table(ens: &SbcEnsemble) -> TruthTable {
    let row = |truth: Hypothesis| {
        let ps: Vec<f64> = ens.successes().filter(|r| r.truth == truth).filter_map(|r| r.p_h1_post).collect();
        if ps.is_empty() {
            return None;
        }
        let n = ps.len();
        let p_h1 = ps.iter().sum::<f64>() / n as f64;
        let correct = if truth == Hypothesis::H1 { p_h1 } else { 1.0 - p_h1 };
        let (lo, hi) = wilson_interval(correct, n, Z_95);
        Some(TruthRow { n, p_h0: 100.0 * (1.0 - p_h1), p_h1: 100.0 * p_h1, correct_ci: (100.0 * lo, 100.0 * hi) })
    };
    TruthTable { h0: row(Hypothesis::H0), h1: row(Hypothesis::H1) }
}

/// One bin of a prior sweep: mean prior and mean posterior probability of H0
/// over consecutive runs sorted by prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n: usize,
    pub prior_p_h0: f64,
    pub post_p_h0: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSweep {
    pub points: Vec<SweepPoint>,
    /// Least-squares slope through the origin of posterior on prior probability
    /// of H0 over individual runs; 1 for a calibrated pipeline.
    pub slope: f64,
    pub ensemble: SbcEnsemble,
}

impl PriorSweep {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "n,prior_p_h0,post_p_h0,ci_low,ci_high")?;
        for p in &self.points {
            writeln!(
                w,
                "{},{},{},{},{}",
                p.n,
                fmt17(p.prior_p_h0),
                fmt17(p.post_p_h0),
                fmt17(p.ci_low),
                fmt17(p.ci_high)
            )?;
        }
        Ok(())
    }
}

/// Evenly spaced prior probabilities of H0 from 0 to 1, one per run.
pub fn even_prior_grid(n_runs: usize) -> Vec<f64> {
    match n_runs {
        0 => Vec::new(),
        1 => vec![0.5],
        n => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

/// Calibration with the prior probability of H0 varied across runs.
/// Runs are binned `bin_size` at a time in order of their prior.
pub fn prior_probability_sweep<P: SbcPipeline>(
    pipeline: &P,
    prior_p_h0: &[f64],
    bin_size: usize,
    seed: u64,
) -> Result<PriorSweep> {
    if prior_p_h0.is_empty() {
        return Err(structural("prior grid is empty"));
    }
    if bin_size == 0 {
        return Err(structural("bin size must be positive"));
    }
    let priors: Vec<ModelPrior> = prior_p_h0.iter().map(|p| ModelPrior::new(*p, 1.0 - *p)).collect::<Result<_>>()?;
    let ensemble = run_sbc_with_priors(pipeline, &priors, seed)?;
    let mut pairs: Vec<(f64, f64)> =
        ensemble.successes().filter_map(|r| r.p_h1_post.map(|p| (1.0 - r.prior_p_h1, 1.0 - p))).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let points = pairs
        .chunks(bin_size)
        .map(|c| {
            let n = c.len();
            let prior = c.iter().map(|p| p.0).sum::<f64>() / n as f64;
            let post = c.iter().map(|p| p.1).sum::<f64>() / n as f64;
            let (lo, hi) = wilson_interval(post, n, Z_95);
            SweepPoint { n, prior_p_h0: prior, post_p_h0: post, ci_low: lo, ci_high: hi }
        })
        .collect();
    let sxx: f64 = pairs.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pairs.iter().map(|p| p.0 * p.1).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { f64::NAN };
    Ok(PriorSweep { points, slope, ensemble })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(n: usize, prior: ModelPrior) -> SbcEnsemble {
        run_sbc_with(&ConstantPipeline { log_bf10: 0.0 }, n, prior, 3).unwrap()
    }

    #[test]
    fn uninformative_pipeline_recovers_prior_exactly() {
        let ens = constant(200, ModelPrior::with_p_h1(0.3).unwrap());
        let rec = sbc_prior_recovery(&ens).unwrap();
        assert!((rec.mean_p_h1 - 0.3).abs() < 1e-12);
        assert!(rec.pass);
        let even = sbc_prior_recovery(&constant(60, ModelPrior::even())).unwrap();
        assert_eq!(even.mean_p_h1, 0.5);
        assert!(even.pass && even.direction() == 0);
        let t = sbc_truth_table(&constant(100, ModelPrior::even()));
        for row in [t.h0.unwrap(), t.h1.unwrap()] {
            assert!((row.p_h0 - 50.0).abs() < 1e-9 && (row.p_h1 - 50.0).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_prior_fixes_truth() {
        let ens = constant(1, ModelPrior::with_p_h1(1.0).unwrap());
        assert_eq!(ens.runs[0].truth, Hypothesis::H1);
        let ens = constant(20, ModelPrior::with_p_h1(0.0).unwrap());
        assert!(ens.runs.iter().all(|r| r.truth == Hypothesis::H0 && r.p_h1_post == Some(0.0)));
    }

    #[test]
    fn truths_are_roughly_balanced() {
        let ens = constant(500, ModelPrior::even());
        let h1 = ens.runs.iter().filter(|r| r.truth == Hypothesis::H1).count();
        assert!((200..=300).contains(&h1), "{h1}");
        assert!(sbc_truth_table(&ens).h0.is_some());
    }

    #[test]
    fn recovery_needs_enough_runs() {
        assert!(sbc_prior_recovery(&constant(49, ModelPrior::even())).is_err());
        assert!(run_sbc_with(&ConstantPipeline { log_bf10: 0.0 }, 0, ModelPrior::even(), 1).is_err());
    }

    #[test]
    fn failures_are_recorded_and_invalidate() {
        let ens = run_sbc_with(&ConstantPipeline { log_bf10: f64::NAN }, 10, ModelPrior::even(), 1).unwrap();
        assert_eq!(ens.n_failures(), 10);
        assert!(!ens.is_valid());
        assert!(ens.runs.iter().all(|r| r.failure.is_some() && r.log_bf10.is_none()));
        let t = sbc_truth_table(&ens);
        assert!(t.h0.is_none() && t.h1.is_none());
    }

    #[test]
    fn jsonl_round_trip() {
        let ens = run_sbc_with(&ConjugatePipeline::default(), 30, ModelPrior::even(), 9).unwrap();
        let mut buf = Vec::new();
        ens.write_jsonl(&mut buf).unwrap();
        assert_eq!(String::from_utf8_lossy(&buf).lines().count(), 30);
        let back = SbcEnsemble::read_jsonl(&buf[..], 9).unwrap();
        assert_eq!(back.runs, ens.runs);
    }

    #[test]
    fn sweep_with_degenerate_ends() {
        let grid = even_prior_grid(101);
        assert_eq!(grid[0], 0.0);
        assert_eq!(grid[100], 1.0);
        let sweep = prior_probability_sweep(&ConjugatePipeline::default(), &grid, 50, 4).unwrap();
        assert_eq!(sweep.points.len(), 3);
        let last = sweep.ensemble.runs.last().unwrap();
        assert_eq!(last.p_h1_post, Some(0.0));
        assert!(sweep.slope.is_finite());
        assert!(prior_probability_sweep(&ConjugatePipeline::default(), &[1.5], 50, 4).is_err());
    }
}
