//! Rank-normalized split-R-hat and effective sample sizes.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::ChainSet;
use crate::math::{mean, quantile_sorted, sorted, std_normal_quantile, variance};

/// Convergence summary per unconstrained parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub rhat: Vec<f64>,
    pub bulk_ess: Vec<f64>,
    pub tail_ess: Vec<f64>,
    pub divergences: usize,
    /// Parameters whose draws never changed; their statistics are NaN.
    pub constant: Vec<usize>,
}

impl Diagnostics {
    pub fn compute(set: &ChainSet) -> Self {
        let mut d = Self {
            rhat: Vec::with_capacity(set.dim),
            bulk_ess: Vec::with_capacity(set.dim),
            tail_ess: Vec::with_capacity(set.dim),
            divergences: set.divergences(),
            constant: Vec::new(),
        };
        for j in 0..set.dim {
            let chains = set.param_chains(j);
            let refs: Vec<&[f64]> = chains.iter().map(|c| c.as_slice()).collect();
            let r = rhat(&refs);
            if r.is_nan() {
                d.constant.push(j);
            }
            d.rhat.push(r);
            d.bulk_ess.push(bulk_ess(&refs));
            d.tail_ess.push(tail_ess(&refs));
        }
        d
    }

    pub fn max_rhat(&self) -> f64 {
        self.rhat.iter().copied().filter(|r| !r.is_nan()).fold(f64::NAN, f64::max)
    }

    pub fn min_bulk_ess(&self) -> f64 {
        self.bulk_ess.iter().copied().filter(|r| !r.is_nan()).fold(f64::NAN, f64::min)
    }

    pub fn min_tail_ess(&self) -> f64 {
        self.tail_ess.iter().copied().filter(|r| !r.is_nan()).fold(f64::NAN, f64::min)
    }

    /// The usual acceptance rule: all R-hat at most 1.01 and no divergences.
    pub fn converged(&self) -> bool {
        self.divergences == 0 && self.rhat.iter().all(|r| r.is_nan() || *r <= 1.01)
    }
}

/// Splits each chain into halves (dropping the middle draw of odd-length chains).
pub fn split_chains(chains: &[&[f64]]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let h = c.len() / 2;
        out.push(c[..h].to_vec());
        out.push(c[c.len() - h..].to_vec());
    }
    out
}

/// Replaces draws by normal scores of their pooled ranks (average rank for ties).
pub fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut flat: Vec<(f64, usize)> = chains.iter().flatten().copied().zip(0..).collect();
    let s = flat.len();
    flat.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut z = vec![0.0; s];
    let mut i = 0;
    while i < s {
        let mut j = i;
        while j + 1 < s && flat[j + 1].0 == flat[i].0 {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        let score = std_normal_quantile((rank - 0.375) / (s as f64 + 0.25));
        for f in &flat[i..=j] {
            z[f.1] = score;
        }
        i = j + 1;
    }
    let mut out = Vec::with_capacity(chains.len());
    let mut k = 0;
    for c in chains {
        out.push(z[k..k + c.len()].to_vec());
        k += c.len();
    }
    out
}

fn rhat_basic(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len() as f64;
    if m < 2.0 || n < 2.0 {
        return f64::NAN;
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let b = n * variance(&means);
    let w = chains.iter().map(|c| variance(c)).sum::<f64>() / m;
    if !(w > 0.0) {
        return f64::NAN;
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

fn is_constant(chains: &[&[f64]]) -> bool {
    let first = chains.iter().find_map(|c| c.first()).copied();
    match first {
        Some(f) => chains.iter().all(|c| c.iter().all(|&v| v == f)),
        None => true,
    }
}

/// Rank-normalized split-R-hat: the larger of the bulk and folded versions.
/// NaN for constant draws.
pub fn rhat(chains: &[&[f64]]) -> f64 {
    if is_constant(chains) {
        return f64::NAN;
    }
    let split = split_chains(chains);
    let bulk = rhat_basic(&rank_normalize(&split));
    let all: Vec<f64> = split.iter().flatten().copied().collect();
    let med = quantile_sorted(&sorted(&all), 0.5);
    let folded: Vec<Vec<f64>> = split.iter().map(|c| c.iter().map(|v| (v - med).abs()).collect()).collect();
    let tail = rhat_basic(&rank_normalize(&folded));
    bulk.max(tail)
}

/// Biased autocovariance for lags `0..n` via FFT.
fn autocovariance(x: &[f64], planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = x.len();
    let m = mean(x);
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(v - m, 0.0)).collect();
    buf.resize(size, Complex::new(0.0, 0.0));
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    buf[..n].iter().map(|c| c.re / (size as f64 * n as f64)).collect()
}

/// Effective sample size of already split chains (Geyer initial monotone sequence).
pub fn ess(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if m == 0 || n < 4 {
        return f64::NAN;
    }
    let mut planner = FftPlanner::new();
    let acov: Vec<Vec<f64>> = chains.iter().map(|c| autocovariance(&c[..n], &mut planner)).collect();
    let nf = n as f64;
    let chain_means: Vec<f64> = chains.iter().map(|c| mean(&c[..n])).collect();
    let mean_var = acov.iter().map(|a| a[0] * nf / (nf - 1.0)).sum::<f64>() / m as f64;
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += variance(&chain_means);
    }
    if !(var_plus > 0.0) {
        return f64::NAN;
    }
    let rho_at = |t: usize| 1.0 - (mean_var - acov.iter().map(|a| a[t]).sum::<f64>() / m as f64) / var_plus;

    let mut rho = vec![0.0; n];
    rho[0] = 1.0;
    let mut even = 1.0;
    let mut odd = rho_at(1);
    rho[1] = odd;
    let mut t = 0;
    while t + 5 < n && even + odd > 0.0 {
        t += 2;
        even = rho_at(t);
        odd = rho_at(t + 1);
        if even + odd >= 0.0 {
            rho[t] = even;
            rho[t + 1] = odd;
        }
    }
    let max_t = t;
    if even > 0.0 {
        rho[max_t] = even;
    }
    // enforce a monotone sequence of paired sums
    let mut t = 0;
    while t + 4 <= max_t {
        t += 2;
        if rho[t] + rho[t + 1] > rho[t - 2] + rho[t - 1] {
            rho[t] = (rho[t - 2] + rho[t - 1]) / 2.0;
            rho[t + 1] = rho[t];
        }
    }
    let total = (m * n) as f64;
    let tau = (-1.0 + 2.0 * rho[..max_t].iter().sum::<f64>() + rho[max_t]).max(1.0 / total.log10());
    total / tau
}

/// Bulk effective sample size: ESS of rank-normalized split chains.
pub fn bulk_ess(chains: &[&[f64]]) -> f64 {
    if is_constant(chains) {
        return f64::NAN;
    }
    ess(&rank_normalize(&split_chains(chains)))
}

/// Tail effective sample size: the smaller ESS of the 5% and 95% quantile indicators.
pub fn tail_ess(chains: &[&[f64]]) -> f64 {
    if is_constant(chains) {
        return f64::NAN;
    }
    let split = split_chains(chains);
    let all = sorted(&split.iter().flatten().copied().collect::<Vec<_>>());
    let at = |p: f64| {
        let q = quantile_sorted(&all, p);
        let ind: Vec<Vec<f64>> =
            split.iter().map(|c| c.iter().map(|&v| if v <= q { 1.0 } else { 0.0 }).collect()).collect();
        ess(&ind)
    };
    at(0.05).min(at(0.95))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn iid(chains: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        (0..chains)
            .map(|c| {
                let mut rng = stream(seed, "iid", c as u64);
                (0..n).map(|_| rng.sample(StandardNormal)).collect()
            })
            .collect()
    }

    fn refs(c: &[Vec<f64>]) -> Vec<&[f64]> {
        c.iter().map(|v| v.as_slice()).collect()
    }

    #[test]
    fn identical_stationary_chains() {
        // a repeating ramp, identical in every chain
        let ramp: Vec<f64> = (0..1000).map(|i| (i % 20) as f64).collect();
        let chains = vec![ramp.clone(), ramp.clone(), ramp.clone(), ramp];
        let r = rhat(&refs(&chains));
        assert!((r - 1.0).abs() < 0.01, "{r}");
    }

    #[test]
    fn shifted_chain_detected() {
        let mut chains = iid(4, 1000, 1);
        chains[0].iter_mut().for_each(|v| *v += 10.0);
        assert!(rhat(&refs(&chains)) > 1.5);
    }

    #[test]
    fn iid_draws_have_full_ess() {
        let chains = iid(4, 2000, 2);
        let total = 8000.0;
        let b = bulk_ess(&refs(&chains));
        let t = tail_ess(&refs(&chains));
        assert!((b / total - 1.0).abs() < 0.2, "{b}");
        assert!((t / total - 1.0).abs() < 0.2, "{t}");
        let r = rhat(&refs(&chains));
        assert!((r - 1.0).abs() < 0.01);
    }

    #[test]
    fn autocorrelated_draws_have_smaller_ess() {
        let mut rng = stream(3, "ar", 0);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let mut x = 0.0;
                (0..2000)
                    .map(|_| {
                        x = 0.9 * x + rng.sample::<f64, _>(StandardNormal);
                        x
                    })
                    .collect()
            })
            .collect();
        let e = bulk_ess(&refs(&chains));
        // AR(1) with phi = 0.9: ESS / N = (1 - phi) / (1 + phi) ~ 0.053
        let ratio = e / 8000.0;
        assert!(ratio > 0.035 && ratio < 0.075, "{ratio}");
    }

    #[test]
    fn constant_chains_flagged() {
        let chains = vec![vec![1.0; 100], vec![1.0; 100]];
        assert!(rhat(&refs(&chains)).is_nan());
        assert!(bulk_ess(&refs(&chains)).is_nan());
    }

    #[test]
    fn autocovariance_matches_direct() {
        let x: Vec<f64> = iid(1, 50, 4).remove(0);
        let mut planner = FftPlanner::new();
        let a = autocovariance(&x, &mut planner);
        let m = mean(&x);
        for lag in [0, 1, 5, 20] {
            let direct: f64 = (0..50 - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum::<f64>() / 50.0;
            assert!((a[lag] - direct).abs() < 1e-12);
        }
    }
}
