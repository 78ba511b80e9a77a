//! Balanced factorial designs and simulation of lognormal response times.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, structural, Result};
use crate::model::{Dataset, DesignRow, PriorSpec, RandomEffects};
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    /// Condition codes, each -1 or +1.
    pub levels: Vec<f64>,
    pub replications: usize,
    pub n_subjects: usize,
    /// 0 means the design has no item factor.
    pub n_items: usize,
}

impl Default for DesignSpec {
    /// 15 subjects, two conditions, two replications, no items.
    fn default() -> Self {
        Self { levels: vec![-1.0, 1.0], replications: 2, n_subjects: 15, n_items: 0 }
    }
}

impl DesignSpec {
    pub fn n_rows(&self) -> usize {
        self.levels.len() * self.replications * self.n_subjects * self.n_items.max(1)
    }
}

/// Balanced, fully crossed design. Rows are ordered by subject, then item,
/// then condition, then replication.
pub fn generate_design(spec: &DesignSpec) -> Result<Vec<DesignRow>> {
    if spec.n_subjects == 0 {
        return Err(structural("design needs at least one subject"));
    }
    if spec.levels.is_empty() {
        return Err(structural("design needs at least one condition level"));
    }
    if spec.replications == 0 {
        return Err(structural("design needs at least one replication"));
    }
    if let Some(x) = spec.levels.iter().find(|&&x| x != 1.0 && x != -1.0) {
        return Err(domain(format!("condition codes must be -1 or +1, got {x}")));
    }
    let items: Vec<Option<usize>> = if spec.n_items == 0 { vec![None] } else { (0..spec.n_items).map(Some).collect() };
    let mut rows = Vec::with_capacity(spec.n_rows());
    for subj in 0..spec.n_subjects {
        for &item in &items {
            for &x in &spec.levels {
                for _ in 0..spec.replications {
                    rows.push(DesignRow { subj, item, x });
                }
            }
        }
    }
    Ok(rows)
}

/// Standard deviations and correlation of a by-group intercept and slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarComp {
    pub sd0: f64,
    pub sd1: f64,
    pub rho: f64,
}

impl VarComp {
    pub fn zero() -> Self {
        Self { sd0: 0.0, sd1: 0.0, rho: 0.0 }
    }

    fn validate(&self) -> Result<()> {
        if !(self.sd0 >= 0.0 && self.sd1 >= 0.0 && self.sd0.is_finite() && self.sd1.is_finite()) {
            return Err(domain("random-effect SDs must be finite and nonnegative"));
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(domain(format!("correlation {} outside (-1, 1)", self.rho)));
        }
        Ok(())
    }

    /// Draws `n` correlated `(intercept, slope)` effects.
    pub fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<(f64, f64)> {
        let rc = (1.0 - self.rho * self.rho).sqrt();
        (0..n)
            .map(|_| {
                let z0: f64 = rng.sample(StandardNormal);
                let z1: f64 = rng.sample(StandardNormal);
                (self.sd0 * z0, self.sd1 * (self.rho * z0 + rc * z1))
            })
            .collect()
    }
}

/// Generating parameters for simulated data, on the log-ms scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub beta0: f64,
    pub beta1: f64,
    pub subject: VarComp,
    pub item: Option<VarComp>,
    pub sigma: f64,
    /// Make the least-squares fixed effects of log rt equal `beta0`, `beta1` exactly.
    pub empirical: bool,
}

impl SimTruth {
    pub fn validate(&self) -> Result<()> {
        if !self.beta0.is_finite() || !self.beta1.is_finite() {
            return Err(domain("fixed effects must be finite"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(domain("residual SD must be finite and nonnegative"));
        }
        self.subject.validate()?;
        if let Some(vc) = &self.item {
            vc.validate()?;
        }
        Ok(())
    }

    /// Draws generating parameters from `prior`. The slope is zero unless
    /// `with_slope`; SDs of random effects absent from `subject`/`item` are zero.
    pub fn from_prior<R: Rng + ?Sized>(
        prior: &PriorSpec,
        with_slope: bool,
        subject: RandomEffects,
        item: RandomEffects,
        rng: &mut R,
    ) -> Self {
        let beta0 = prior.intercept.sample(rng);
        let beta1 = match (with_slope, prior.slope) {
            (true, Some(s)) => s.sample(rng),
            _ => 0.0,
        };
        let vc = |re: RandomEffects, rng: &mut R| {
            let mut v = VarComp::zero();
            if re.n_effects() >= 1 {
                v.sd0 = prior.sd.sample(rng);
            }
            if re.n_effects() == 2 {
                v.sd1 = prior.sd.sample(rng);
                v.rho = prior.correlation.sample(rng).clamp(-1.0 + 1e-12, 1.0 - 1e-12);
            }
            v
        };
        let subject = vc(subject, rng);
        let item = (item != RandomEffects::None).then(|| vc(item, rng));
        let sigma = prior.sigma.sample(rng);
        Self { beta0, beta1, subject, item, sigma, empirical: false }
    }
}

/// Simulates `rt = exp(beta0 + beta1 x + subject and item effects + noise)` on `design`.
/// The same seed always produces the same dataset.
pub fn sim_lmm(design: &[DesignRow], truth: &SimTruth, seed: u64) -> Result<Dataset> {
    let mut rng = stream(seed, "sim-lmm", 0);
    sim_lmm_with(design, truth, &mut rng)
}

/// [`sim_lmm`] drawing from a caller-supplied generator.
pub fn sim_lmm_with<R: Rng + ?Sized>(design: &[DesignRow], truth: &SimTruth, rng: &mut R) -> Result<Dataset> {
    if design.is_empty() {
        return Err(structural("design has no rows"));
    }
    truth.validate()?;
    let n_subj = design.iter().map(|d| d.subj + 1).max().unwrap_or(0);
    let n_item = design.iter().filter_map(|d| d.item.map(|i| i + 1)).max().unwrap_or(0);
    let subj = truth.subject.draw(n_subj, rng);
    let item = match truth.item {
        Some(vc) if n_item > 0 => vc.draw(n_item, rng),
        _ => vec![(0.0, 0.0); n_item],
    };
    let mut noise: Vec<f64> = design
        .iter()
        .map(|d| {
            let (u0, u1) = subj[d.subj];
            let (w0, w1) = d.item.map_or((0.0, 0.0), |i| item[i]);
            let e: f64 = rng.sample(StandardNormal);
            u0 + u1 * d.x + w0 + w1 * d.x + truth.sigma * e
        })
        .collect();
    if truth.empirical {
        residualize(design, &mut noise);
    }
    let rts: Vec<f64> = design.iter().zip(&noise).map(|(d, e)| (truth.beta0 + truth.beta1 * d.x + e).exp()).collect();
    Dataset::from_design(design, &rts)
}

/// Simulates responses from given effects rather than from variance components.
/// `subj` and `item` hold `(intercept, slope)` effects per level.
pub fn sim_from_effects<R: Rng + ?Sized>(
    design: &[DesignRow],
    beta0: f64,
    beta1: f64,
    subj: &[(f64, f64)],
    item: &[(f64, f64)],
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    design
        .iter()
        .map(|d| {
            let (u0, u1) = *subj.get(d.subj).ok_or_else(|| structural("subject index out of range"))?;
            let (w0, w1) = match d.item {
                Some(i) if !item.is_empty() => *item.get(i).ok_or_else(|| structural("item index out of range"))?,
                _ => (0.0, 0.0),
            };
            let e: f64 = rng.sample(StandardNormal);
            Ok((beta0 + beta1 * d.x + u0 + u1 * d.x + w0 + w1 * d.x + sigma * e).exp())
        })
        .collect()
}

/// Removes the least-squares fit on `[1, x]` from `v`. Falls back to removing
/// the mean alone when `x` is constant.
fn residualize(design: &[DesignRow], v: &mut [f64]) {
    let n = v.len() as f64;
    let sx: f64 = design.iter().map(|d| d.x).sum();
    let sxx: f64 = design.iter().map(|d| d.x * d.x).sum();
    let sv: f64 = v.iter().sum();
    let sxv: f64 = design.iter().zip(v.iter()).map(|(d, e)| d.x * e).sum();
    let det = n * sxx - sx * sx;
    let (a, b) = if det.abs() > 1e-9 * n * sxx {
        ((sxx * sv - sx * sxv) / det, (n * sxv - sx * sv) / det)
    } else {
        (sv / n, 0.0)
    };
    for (e, d) in v.iter_mut().zip(design) {
        *e -= a + b * d.x;
    }
}

/// Least-squares intercept and slope of `log rt` on `x`.
pub fn ols_fixed_effects(data: &Dataset) -> (f64, f64) {
    let rows = data.rows();
    let n = rows.len() as f64;
    let mx = rows.iter().map(|r| r.x).sum::<f64>() / n;
    let my = rows.iter().map(|r| r.rt.ln()).sum::<f64>() / n;
    let sxy: f64 = rows.iter().map(|r| (r.x - mx) * (r.rt.ln() - my)).sum();
    let sxx: f64 = rows.iter().map(|r| (r.x - mx).powi(2)).sum();
    let b = sxy / sxx;
    (my - b * mx, b)
}
