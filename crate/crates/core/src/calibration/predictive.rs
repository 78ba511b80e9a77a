use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{generate_design, sim_from_effects, sim_lmm_with, DesignSpec, SimTruth};
use crate::error::{structural, Result};
use crate::io::fmt17;
use crate::math::{mean, quantile_sorted, sd, sorted};
use crate::model::{Dataset, DesignRow, LmmModelSpec, LmmPosterior, PriorSpec};
use crate::rng::stream;
use crate::sampler::ChainSet;

/// Upper edge of the response-time histogram, in ms.
pub const HIST_MAX_MS: f64 = 2000.0;
pub const HIST_BINS: usize = 40;

/// Where parameter values for simulated datasets come from.
#[derive(Debug, Clone, Copy)]
pub enum PredictiveSource<'a> {
    /// Fresh draws from the prior for each dataset.
    Prior { prior: &'a PriorSpec, spec: LmmModelSpec, design: &'a DesignSpec },
    /// The same generating parameters for every dataset.
    Fixed { truth: &'a SimTruth, design: &'a DesignSpec },
    /// Posterior draws, reusing the fitted subject and item effects on the observed design.
    Posterior { model: &'a LmmPosterior, chains: &'a ChainSet, data: &'a Dataset },
}

/// Summary statistics of one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub mean_rt: f64,
    /// Mean rt at `x = +1` minus mean rt at `x = -1`.
    pub cond_diff: f64,
    pub sd_rt: f64,
    /// Counts in `HIST_BINS` equal bins over `[0, HIST_MAX_MS)`.
    pub hist: Vec<usize>,
    /// Responses at or above `HIST_MAX_MS`.
    pub above: usize,
}

impl DatasetStats {
    pub fn compute(design: &[DesignRow], rts: &[f64]) -> Self {
        let (mut s_hi, mut n_hi, mut s_lo, mut n_lo) = (0.0, 0usize, 0.0, 0usize);
        for (d, rt) in design.iter().zip(rts) {
            if d.x > 0.0 {
                s_hi += rt;
                n_hi += 1;
            } else {
                s_lo += rt;
                n_lo += 1;
            }
        }
        let cond_diff = if n_hi > 0 && n_lo > 0 { s_hi / n_hi as f64 - s_lo / n_lo as f64 } else { f64::NAN };
        let mut hist = vec![0; HIST_BINS];
        let mut above = 0;
        let width = HIST_MAX_MS / HIST_BINS as f64;
        for &rt in rts {
            if rt >= HIST_MAX_MS || rt.is_nan() {
                above += 1;
            } else {
                hist[((rt / width) as usize).min(HIST_BINS - 1)] += 1;
            }
        }
        Self { mean_rt: mean(rts), cond_diff, sd_rt: sd(rts), hist, above }
    }

    pub fn of_dataset(data: &Dataset) -> Self {
        Self::compute(&data.design(), &data.rts())
    }
}

/// The 10th to 90th percentiles in steps of ten; bands are the symmetric
/// pairs 10–90, 20–80, 30–70 and 40–60 around the median.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandLevels(pub [f64; 9]);

impl BandLevels {
    pub const PROBS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

    pub fn of(xs: &[f64]) -> Self {
        let s = sorted(xs);
        Self(Self::PROBS.map(|p| quantile_sorted(&s, p)))
    }

    pub fn median(&self) -> f64 {
        self.0[4]
    }

    /// Band with the given central coverage in percent: 80, 60, 40 or 20.
    pub fn band(&self, coverage: u32) -> Option<(f64, f64)> {
        let k = match coverage {
            80 => 0,
            60 => 1,
            40 => 2,
            20 => 3,
            _ => return None,
        };
        Some((self.0[k], self.0[8 - k]))
    }

    pub fn covers(&self, coverage: u32, x: f64) -> bool {
        self.band(coverage).is_some_and(|(lo, hi)| lo <= x && x <= hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSummary {
    pub datasets: Vec<DatasetStats>,
    /// Statistics of the observed data for posterior checks.
    pub observed: Option<DatasetStats>,
    pub mean_rt: BandLevels,
    pub cond_diff: BandLevels,
    pub sd_rt: BandLevels,
    /// Percentile bands of the count in each histogram bin.
    pub hist: Vec<BandLevels>,
}

impl PredictiveSummary {
    /// CSV with header `dataset,mean_rt,cond_diff,sd_rt,above`.
    pub fn write_stats_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "dataset,mean_rt,cond_diff,sd_rt,above")?;
        for (i, d) in self.datasets.iter().enumerate() {
            writeln!(w, "{i},{},{},{},{}", fmt17(d.mean_rt), fmt17(d.cond_diff), fmt17(d.sd_rt), d.above)?;
        }
        Ok(())
    }

    /// Histogram bands, one row per bin, with the observed count when available.
    pub fn write_hist_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "bin_lo,bin_hi,q10,q20,q30,q40,q50,q60,q70,q80,q90,observed")?;
        let width = HIST_MAX_MS / HIST_BINS as f64;
        for (b, q) in self.hist.iter().enumerate() {
            let qs: Vec<String> = q.0.iter().map(|v| fmt17(*v)).collect();
            let obs = self.observed.as_ref().map_or(String::new(), |o| o.hist[b].to_string());
            writeln!(w, "{},{},{},{obs}", fmt17(b as f64 * width), fmt17((b + 1) as f64 * width), qs.join(","))?;
        }
        Ok(())
    }
}

/// Simulates `n_datasets` datasets from `source` and summarizes them.
pub fn predictive_check(source: PredictiveSource<'_>, n_datasets: usize, seed: u64) -> Result<PredictiveSummary> {
    if n_datasets == 0 {
        return Err(structural("predictive check needs at least one dataset"));
    }
    let (design, observed) = match source {
        PredictiveSource::Prior { design, prior, .. } => {
            prior.validate()?;
            (generate_design(design)?, None)
        }
        PredictiveSource::Fixed { design, truth } => {
            truth.validate()?;
            (generate_design(design)?, None)
        }
        PredictiveSource::Posterior { chains, data, .. } => {
            if chains.n_draws() == 0 {
                return Err(structural("posterior check needs draws"));
            }
            (data.design(), Some(DatasetStats::of_dataset(data)))
        }
    };
    let datasets: Vec<DatasetStats> = (0..n_datasets)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(seed, "predictive", k as u64);
            let rts = match source {
                PredictiveSource::Prior { prior, spec, .. } => {
                    let truth = SimTruth::from_prior(prior, spec.include_slope, spec.subject, spec.item, &mut rng);
                    sim_lmm_with(&design, &truth, &mut rng)?.rts()
                }
                PredictiveSource::Fixed { truth, .. } => sim_lmm_with(&design, truth, &mut rng)?.rts(),
                PredictiveSource::Posterior { model, chains, .. } => {
                    // evenly spaced draws across all chains
                    let idx = k * chains.n_draws() / n_datasets;
                    let p = model.constrain(chains.draw(idx / chains.iter, idx % chains.iter))?;
                    let item = p.item.as_ref().map(|g| g.effects()).unwrap_or_default();
                    sim_from_effects(&design, p.beta0, p.beta1, &p.subject.effects(), &item, p.sigma, &mut rng)?
                }
            };
            Ok(DatasetStats::compute(&design, &rts))
        })
        .collect::<Result<_>>()?;
    let col = |f: fn(&DatasetStats) -> f64| BandLevels::of(&datasets.iter().map(f).collect::<Vec<_>>());
    let hist = (0..HIST_BINS)
        .map(|b| BandLevels::of(&datasets.iter().map(|d| d.hist[b] as f64).collect::<Vec<_>>()))
        .collect();
    Ok(PredictiveSummary {
        mean_rt: col(|d| d.mean_rt),
        cond_diff: col(|d| d.cond_diff),
        sd_rt: col(|d| d.sd_rt),
        hist,
        datasets,
        observed,
    })
}
