//! Adaptive Hamiltonian Monte Carlo over unconstrained parameters.

mod adapt;
mod diagnostics;
mod nuts;

pub use diagnostics::{bulk_ess, ess, rank_normalize, rhat, split_chains, tail_ess, Diagnostics};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{structural, Error, Result};
use crate::model::LogDensity;
use crate::rng::{stream, EngineRng};
use adapt::{metric_windows, DualAveraging, Welford};
use nuts::{init_stepsize, transition, Point, Workspace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_chains: usize,
    pub warmup: usize,
    /// Retained draws per chain.
    pub iter: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { n_chains: 4, warmup: 2000, iter: 8000, target_accept: 0.99, max_tree_depth: 15, seed: 1 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 {
            return Err(structural("need at least one chain"));
        }
        if self.warmup < 100 {
            return Err(structural(format!("warmup must be at least 100, got {}", self.warmup)));
        }
        if self.iter == 0 {
            return Err(structural("iter must be at least 1"));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(structural(format!("target_accept must lie in (0, 1), got {}", self.target_accept)));
        }
        if self.max_tree_depth == 0 {
            return Err(structural("max_tree_depth must be at least 1"));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Post-warmup draws of all chains, stored chain-major in unconstrained space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSet {
    pub dim: usize,
    pub n_chains: usize,
    pub iter: usize,
    /// `n_chains × iter × dim`.
    pub draws: Vec<f64>,
    /// Log joint density of each draw, `n_chains × iter`.
    pub log_joint: Vec<f64>,
    pub accept_stat: Vec<f64>,
    pub tree_depth: Vec<u8>,
    pub n_leapfrog: Vec<u32>,
    pub divergent: Vec<bool>,
    pub step_size: Vec<f64>,
    pub inv_metric: Vec<Vec<f64>>,
}

impl ChainSet {
    pub fn n_draws(&self) -> usize {
        self.n_chains * self.iter
    }

    pub fn draw(&self, chain: usize, i: usize) -> &[f64] {
        let k = (chain * self.iter + i) * self.dim;
        &self.draws[k..k + self.dim]
    }

    /// All draws in chain-major order.
    pub fn iter_draws(&self) -> impl Iterator<Item = &[f64]> {
        self.draws.chunks_exact(self.dim)
    }

    /// Draws of parameter `j`, one vector per chain.
    pub fn param_chains(&self, j: usize) -> Vec<Vec<f64>> {
        (0..self.n_chains).map(|c| (0..self.iter).map(|i| self.draw(c, i)[j]).collect()).collect()
    }

    /// Draws of parameter `j` pooled over chains.
    pub fn param(&self, j: usize) -> Vec<f64> {
        self.iter_draws().map(|d| d[j]).collect()
    }

    pub fn divergences(&self) -> usize {
        self.divergent.iter().filter(|d| **d).count()
    }

    pub fn mean_accept_stat(&self) -> f64 {
        crate::math::mean(&self.accept_stat)
    }

    pub fn diagnostics(&self) -> Diagnostics {
        Diagnostics::compute(self)
    }
}

struct ChainOut {
    draws: Vec<f64>,
    log_joint: Vec<f64>,
    accept_stat: Vec<f64>,
    tree_depth: Vec<u8>,
    n_leapfrog: Vec<u32>,
    divergent: Vec<bool>,
    step_size: f64,
    inv_metric: Vec<f64>,
}

/// Finds a finite starting point: an initial draw jittered by U(-0.1, 0.1).
fn initialize<M: LogDensity>(model: &M, rng: &mut EngineRng) -> Result<Point> {
    const RETRIES: usize = 100;
    for _ in 0..RETRIES {
        let mut q = model.initial_point(rng);
        for v in q.iter_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
        let pt = Point::new(q, model);
        if pt.lp.is_finite() && pt.grad.iter().all(|g| g.is_finite()) {
            return Ok(pt);
        }
    }
    Err(Error::Initialization(format!("no finite log density after {RETRIES} attempts")))
}

fn run_chain<M: LogDensity>(model: &M, cfg: &SamplerConfig, chain: usize) -> Result<ChainOut> {
    let dim = model.dim();
    let mut rng = stream(cfg.seed, "chain", chain as u64);
    let mut current = initialize(model, &mut rng)?;
    let mut ws = Workspace::new(dim, cfg.max_tree_depth);
    let mut inv_metric = vec![1.0; dim];
    let mut eps = init_stepsize(model, &current, &inv_metric, 1.0, &mut rng);
    let mut da = DualAveraging::new(cfg.target_accept, eps);
    let windows = metric_windows(cfg.warmup);
    let mut welford = Welford::new(dim);

    for it in 0..cfg.warmup {
        let st = transition(model, &mut current, &inv_metric, eps, cfg.max_tree_depth, &mut ws, &mut rng);
        eps = da.update(st.accept_stat);
        if let Some(&(_, end)) = windows.iter().find(|(s, e)| (*s..*e).contains(&it)) {
            welford.add(&current.q);
            if it + 1 == end {
                inv_metric = welford.regularized_variance();
                welford.reset();
                eps = init_stepsize(model, &current, &inv_metric, eps, &mut rng);
                da.restart(eps);
            }
        }
    }
    eps = da.final_step();

    let mut out = ChainOut {
        draws: Vec::with_capacity(cfg.iter * dim),
        log_joint: Vec::with_capacity(cfg.iter),
        accept_stat: Vec::with_capacity(cfg.iter),
        tree_depth: Vec::with_capacity(cfg.iter),
        n_leapfrog: Vec::with_capacity(cfg.iter),
        divergent: Vec::with_capacity(cfg.iter),
        step_size: eps,
        inv_metric: inv_metric.clone(),
    };
    for _ in 0..cfg.iter {
        let st = transition(model, &mut current, &inv_metric, eps, cfg.max_tree_depth, &mut ws, &mut rng);
        out.draws.extend_from_slice(&current.q);
        out.log_joint.push(current.lp);
        out.accept_stat.push(st.accept_stat);
        out.tree_depth.push(st.depth as u8);
        out.n_leapfrog.push(st.n_leapfrog as u32);
        out.divergent.push(st.divergent);
    }
    Ok(out)
}

/// Runs `cfg.n_chains` independent chains, in parallel where a thread pool is
/// available. Output does not depend on the number of worker threads.
pub fn sample_posterior<M: LogDensity>(model: &M, cfg: &SamplerConfig) -> Result<ChainSet> {
    cfg.validate()?;
    let dim = model.dim();
    if dim == 0 {
        return Err(structural("cannot sample a model without free parameters"));
    }
    let chains: Vec<ChainOut> =
        (0..cfg.n_chains).into_par_iter().map(|c| run_chain(model, cfg, c)).collect::<Result<_>>()?;
    let mut set = ChainSet {
        dim,
        n_chains: cfg.n_chains,
        iter: cfg.iter,
        draws: Vec::with_capacity(cfg.n_chains * cfg.iter * dim),
        log_joint: Vec::with_capacity(cfg.n_chains * cfg.iter),
        accept_stat: Vec::new(),
        tree_depth: Vec::new(),
        n_leapfrog: Vec::new(),
        divergent: Vec::new(),
        step_size: Vec::new(),
        inv_metric: Vec::new(),
    };
    for c in chains {
        set.draws.extend(c.draws);
        set.log_joint.extend(c.log_joint);
        set.accept_stat.extend(c.accept_stat);
        set.tree_depth.extend(c.tree_depth);
        set.n_leapfrog.extend(c.n_leapfrog);
        set.divergent.extend(c.divergent);
        set.step_size.push(c.step_size);
        set.inv_metric.push(c.inv_metric);
    }
    Ok(set)
}
