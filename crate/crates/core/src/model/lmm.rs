use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, LogDensity, PriorSpec};
use crate::error::{domain, structural, Result};
use crate::math::{log1m_tanh_sq, LN_SQRT_2PI};
use crate::rng::EngineRng;

/// Random-effect structure of one grouping factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomEffects {
    None,
    Intercept,
    InterceptSlope,
}

impl RandomEffects {
    pub fn n_effects(self) -> usize {
        match self {
            RandomEffects::None => 0,
            RandomEffects::Intercept => 1,
            RandomEffects::InterceptSlope => 2,
        }
    }
}

/// Which terms of the lognormal mixed model are present.
///
/// A null model differs from its alternative only through `include_slope`;
/// the random-effect structure is shared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LmmModelSpec {
    pub include_slope: bool,
    pub subject: RandomEffects,
    pub item: RandomEffects,
}

impl LmmModelSpec {
    /// Alternative model with correlated by-subject intercepts and slopes,
    /// and the same structure by item when `items` is set.
    pub fn maximal(items: bool) -> Self {
        Self {
            include_slope: true,
            subject: RandomEffects::InterceptSlope,
            item: if items { RandomEffects::InterceptSlope } else { RandomEffects::None },
        }
    }

    /// Alternative model with random intercepts only.
    pub fn intercepts_only(items: bool) -> Self {
        Self {
            include_slope: true,
            subject: RandomEffects::Intercept,
            item: if items { RandomEffects::Intercept } else { RandomEffects::None },
        }
    }

    /// The same model with the population slope fixed at zero.
    pub fn null(self) -> Self {
        Self { include_slope: false, ..self }
    }

    pub fn alternative(self) -> Self {
        Self { include_slope: true, ..self }
    }
}

/// Constrained parameters of one grouping factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupParams {
    pub sd0: f64,
    pub sd1: Option<f64>,
    pub rho: Option<f64>,
    /// Standardized effects, `n_levels × n_effects` row-major.
    pub z: Vec<f64>,
}

impl GroupParams {
    pub fn n_effects(&self) -> usize {
        if self.sd1.is_some() {
            2
        } else {
            1
        }
    }

    /// Actual effects `(u0, u1)` per level, `u1 = 0` without random slopes.
    pub fn effects(&self) -> Vec<(f64, f64)> {
        let k = self.n_effects();
        self.z
            .chunks_exact(k)
            .map(|z| {
                let u0 = self.sd0 * z[0];
                match (self.sd1, self.rho) {
                    (Some(s1), Some(rho)) => (u0, s1 * (rho * z[0] + (1.0 - rho * rho).sqrt() * z[1])),
                    _ => (u0, 0.0),
                }
            })
            .collect()
    }
}

/// Constrained parameter values of the mixed model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub beta0: f64,
    /// Zero for null models.
    pub beta1: f64,
    pub subject: GroupParams,
    pub item: Option<GroupParams>,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy)]
struct GroupLayout {
    k: usize,
    n: usize,
    log_sd0: usize,
    log_sd1: usize,
    t_rho: usize,
    z: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    slope: Option<usize>,
    subject: GroupLayout,
    item: Option<GroupLayout>,
    log_sigma: usize,
    dim: usize,
}

impl Layout {
    fn new(spec: &LmmModelSpec, n_subjects: usize, n_items: usize) -> Self {
        let mut next = 1;
        let slope = spec.include_slope.then(|| {
            next += 1;
            1
        });
        let mut hyper = |re: RandomEffects, n: usize| {
            let k = re.n_effects();
            let log_sd0 = next;
            next += k;
            let t_rho = if k == 2 {
                next += 1;
                next - 1
            } else {
                usize::MAX
            };
            GroupLayout { k, n, log_sd0, log_sd1: log_sd0 + 1, t_rho, z: 0 }
        };
        let mut subject = hyper(spec.subject, n_subjects);
        let mut item = (spec.item != RandomEffects::None).then(|| hyper(spec.item, n_items));
        let log_sigma = next;
        next += 1;
        subject.z = next;
        next += subject.k * subject.n;
        if let Some(g) = item.as_mut() {
            g.z = next;
            next += g.k * g.n;
        }
        Self { slope, subject, item, log_sigma, dim: next }
    }
}

/// Posterior log density of the lognormal mixed model for one dataset, on the
/// unconstrained scale (log for SDs, atanh for correlations), Jacobian included.
///
/// Unconstrained layout: `beta0`, `beta1` (if present), subject hyperparameters
/// (`log sd0`, `log sd1`, `atanh rho` as present), item hyperparameters,
/// `log sigma`, then standardized subject effects and item effects,
/// each stored level-major.
#[derive(Debug, Clone)]
pub struct LmmPosterior {
    spec: LmmModelSpec,
    prior: PriorSpec,
    layout: Layout,
    subj: Vec<u32>,
    item: Vec<u32>,
    x: Vec<f64>,
    log_rt: Vec<f64>,
    sum_log_rt: f64,
}

impl LmmPosterior {
    pub fn new(data: &Dataset, spec: LmmModelSpec, prior: PriorSpec) -> Result<Self> {
        prior.validate()?;
        if data.is_empty() {
            return Err(structural("dataset has no rows"));
        }
        if spec.subject == RandomEffects::None {
            return Err(structural("by-subject random intercepts are required"));
        }
        if spec.include_slope && prior.slope.is_none() {
            return Err(structural("model includes the slope but the prior has no slope component"));
        }
        if spec.item != RandomEffects::None && !data.has_items() {
            return Err(structural("item random effects requested but the dataset has no item column"));
        }
        let layout = Layout::new(&spec, data.n_subjects(), data.n_items());
        let rows = data.rows();
        let log_rt: Vec<f64> = rows.iter().map(|r| r.rt.ln()).collect();
        Ok(Self {
            spec,
            prior,
            layout,
            subj: rows.iter().map(|r| r.subj as u32).collect(),
            item: rows.iter().map(|r| r.item.unwrap_or(0) as u32).collect(),
            x: rows.iter().map(|r| r.x).collect(),
            sum_log_rt: log_rt.iter().sum(),
            log_rt,
        })
    }

    pub fn spec(&self) -> &LmmModelSpec {
        &self.spec
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    /// Index of `beta1` in the unconstrained vector, if the model has a slope.
    pub fn slope_index(&self) -> Option<usize> {
        self.layout.slope
    }

    /// Density of the slope prior at zero, the denominator of the Savage–Dickey ratio.
    pub fn slope_prior_density_at_zero(&self) -> Option<f64> {
        self.spec.include_slope.then(|| self.prior.slope.map(|s| s.lpdf(0.0).exp())).flatten()
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec![String::new(); self.layout.dim];
        names[0] = "beta0".into();
        if let Some(i) = self.layout.slope {
            names[i] = "beta1".into();
        }
        let mut group = |g: &GroupLayout, tag: &str| {
            names[g.log_sd0] = format!("log_sd_{tag}_intercept");
            if g.k == 2 {
                names[g.log_sd1] = format!("log_sd_{tag}_slope");
                names[g.t_rho] = format!("atanh_cor_{tag}");
            }
            for l in 0..g.n {
                for e in 0..g.k {
                    names[g.z + l * g.k + e] = format!("z_{tag}[{l},{e}]");
                }
            }
        };
        group(&self.layout.subject, "subj");
        if let Some(g) = &self.layout.item {
            group(g, "item");
        }
        names[self.layout.log_sigma] = "log_sigma".into();
        names
    }

    pub fn constrain(&self, theta: &[f64]) -> Result<ParameterVector> {
        self.check_dim(theta.len())?;
        let group = |g: &GroupLayout| GroupParams {
            sd0: theta[g.log_sd0].exp(),
            sd1: (g.k == 2).then(|| theta[g.log_sd1].exp()),
            rho: (g.k == 2).then(|| theta[g.t_rho].tanh()),
            z: theta[g.z..g.z + g.k * g.n].to_vec(),
        };
        Ok(ParameterVector {
            beta0: theta[0],
            beta1: self.layout.slope.map_or(0.0, |i| theta[i]),
            subject: group(&self.layout.subject),
            item: self.layout.item.as_ref().map(group),
            sigma: theta[self.layout.log_sigma].exp(),
        })
    }

    pub fn unconstrain(&self, p: &ParameterVector) -> Result<Vec<f64>> {
        let mut theta = vec![0.0; self.layout.dim];
        theta[0] = p.beta0;
        if let Some(i) = self.layout.slope {
            theta[i] = p.beta1;
        }
        let put = |theta: &mut [f64], g: &GroupLayout, gp: &GroupParams| -> Result<()> {
            if gp.n_effects() != g.k || gp.z.len() != g.k * g.n {
                return Err(structural("group parameters do not match the model layout"));
            }
            positive(gp.sd0, "random-effect sd")?;
            theta[g.log_sd0] = gp.sd0.ln();
            if g.k == 2 {
                let sd1 = gp.sd1.expect("checked by n_effects");
                positive(sd1, "random-effect sd")?;
                theta[g.log_sd1] = sd1.ln();
                let rho = gp.rho.ok_or_else(|| structural("missing correlation"))?;
                if !(rho > -1.0 && rho < 1.0) {
                    return Err(domain(format!("correlation {rho} outside (-1, 1)")));
                }
                theta[g.t_rho] = rho.atanh();
            }
            theta[g.z..g.z + g.k * g.n].copy_from_slice(&gp.z);
            Ok(())
        };
        put(&mut theta, &self.layout.subject, &p.subject)?;
        match (&self.layout.item, &p.item) {
            (Some(g), Some(gp)) => put(&mut theta, g, gp)?,
            (None, None) => {}
            _ => return Err(structural("item parameters do not match the model layout")),
        }
        positive(p.sigma, "sigma")?;
        theta[self.layout.log_sigma] = p.sigma.ln();
        Ok(theta)
    }

    /// A parameter draw from the prior.
    pub fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> ParameterVector {
        let pr = &self.prior;
        let group = |g: &GroupLayout, rng: &mut R| GroupParams {
            sd0: pr.sd.sample(rng).max(f64::MIN_POSITIVE),
            sd1: (g.k == 2).then(|| pr.sd.sample(rng).max(f64::MIN_POSITIVE)),
            rho: (g.k == 2).then(|| pr.correlation.sample(rng).clamp(-1.0 + 1e-12, 1.0 - 1e-12)),
            z: (0..g.k * g.n).map(|_| rng.sample(StandardNormal)).collect(),
        };
        let beta0 = pr.intercept.sample(rng);
        let beta1 = match (self.spec.include_slope, pr.slope) {
            (true, Some(s)) => s.sample(rng),
            _ => 0.0,
        };
        let subject = group(&self.layout.subject, rng);
        let item = self.layout.item.as_ref().map(|g| group(g, rng));
        let sigma = pr.sigma.sample(rng).max(f64::MIN_POSITIVE);
        ParameterVector { beta0, beta1, subject, item, sigma }
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if n != self.layout.dim {
            return Err(structural(format!("parameter vector has length {n}, model expects {}", self.layout.dim)));
        }
        Ok(())
    }

    fn eval(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let pr = &self.prior;
        let lay = &self.layout;

        let beta0 = theta[0];
        let mut lp = pr.intercept.lpdf(beta0);
        grad[0] = -(beta0 - pr.intercept.mean) / (pr.intercept.sd * pr.intercept.sd);
        let beta1 = match (lay.slope, pr.slope) {
            (Some(i), Some(sp)) => {
                let b = theta[i];
                lp += sp.lpdf(b);
                grad[i] = -(b - sp.mean) / (sp.sd * sp.sd);
                b
            }
            _ => 0.0,
        };

        let subj = GroupState::new(theta, grad, &lay.subject, pr, &mut lp);
        let item = lay.item.as_ref().map(|g| GroupState::new(theta, grad, g, pr, &mut lp));

        let log_sigma = theta[lay.log_sigma];
        let sigma = log_sigma.exp();
        let scale = pr.sigma.scale;
        lp += pr.sigma.lpdf(sigma) + log_sigma;
        grad[lay.log_sigma] = -(sigma / scale).powi(2) + 1.0;

        let n = self.log_rt.len();
        lp -= n as f64 * (log_sigma + LN_SQRT_2PI) + self.sum_log_rt;
        let inv_sigma = 1.0 / sigma;
        let mut sq = 0.0;
        let (mut g0, mut g1) = (0.0, 0.0);
        let mut du_subj = vec![0.0; subj.lay.n * 2];
        let mut du_item = vec![0.0; item.as_ref().map_or(0, |g| g.lay.n * 2)];
        for r in 0..n {
            let x = self.x[r];
            let s = self.subj[r] as usize;
            let mut mu = beta0 + beta1 * x + subj.u0[s] + subj.u1[s] * x;
            if let Some(it) = &item {
                let i = self.item[r] as usize;
                mu += it.u0[i] + it.u1[i] * x;
            }
            let z = (self.log_rt[r] - mu) * inv_sigma;
            sq += z * z;
            let gm = z * inv_sigma;
            g0 += gm;
            g1 += gm * x;
            du_subj[2 * s] += gm;
            du_subj[2 * s + 1] += gm * x;
            if item.is_some() {
                let i = self.item[r] as usize;
                du_item[2 * i] += gm;
                du_item[2 * i + 1] += gm * x;
            }
        }
        lp -= 0.5 * sq;
        grad[0] += g0;
        if let Some(i) = lay.slope {
            grad[i] += g1;
        }
        grad[lay.log_sigma] += sq - n as f64;
        subj.backprop(theta, grad, &du_subj);
        if let Some(it) = &item {
            it.backprop(theta, grad, &du_item);
        }
        if lp.is_finite() && grad.iter().all(|g| g.is_finite()) {
            lp
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// Per-evaluation state of one grouping factor: hyperparameters and actual effects.
struct GroupState<'a> {
    lay: &'a GroupLayout,
    sd0: f64,
    sd1: f64,
    rho: f64,
    u0: Vec<f64>,
    u1: Vec<f64>,
}

impl<'a> GroupState<'a> {
    /// Adds the hyperprior and standardized-effect terms to `lp` and `grad`.
    fn new(theta: &[f64], grad: &mut [f64], lay: &'a GroupLayout, pr: &PriorSpec, lp: &mut f64) -> Self {
        let scale2 = pr.sd.scale * pr.sd.scale;
        let l0 = theta[lay.log_sd0];
        let sd0 = l0.exp();
        *lp += pr.sd.lpdf(sd0) + l0;
        grad[lay.log_sd0] = 1.0 - sd0 * sd0 / scale2;
        let (mut sd1, mut rho) = (0.0, 0.0);
        if lay.k == 2 {
            let l1 = theta[lay.log_sd1];
            sd1 = l1.exp();
            *lp += pr.sd.lpdf(sd1) + l1;
            grad[lay.log_sd1] = 1.0 - sd1 * sd1 / scale2;
            let t = theta[lay.t_rho];
            rho = t.tanh();
            let eta = pr.correlation.eta;
            // (eta - 1) log(1 - rho^2) plus the tanh Jacobian log(1 - rho^2)
            *lp += eta * log1m_tanh_sq(t) + pr.correlation.log_norm();
            grad[lay.t_rho] = -2.0 * eta * rho;
        }
        let zs = &theta[lay.z..lay.z + lay.k * lay.n];
        *lp -= 0.5 * zs.iter().map(|z| z * z).sum::<f64>() + zs.len() as f64 * LN_SQRT_2PI;
        let rc = (1.0 - rho * rho).sqrt();
        let mut u0 = Vec::with_capacity(lay.n);
        let mut u1 = Vec::with_capacity(lay.n);
        for z in zs.chunks_exact(lay.k) {
            u0.push(sd0 * z[0]);
            u1.push(if lay.k == 2 { sd1 * (rho * z[0] + rc * z[1]) } else { 0.0 });
        }
        Self { lay, sd0, sd1, rho, u0, u1 }
    }

    /// Chains the gradient with respect to the actual effects (`du`, two per level)
    /// through the non-centered transform.
    fn backprop(&self, theta: &[f64], grad: &mut [f64], du: &[f64]) {
        let lay = self.lay;
        let rho = self.rho;
        let rc = (1.0 - rho * rho).sqrt();
        let (mut g_l0, mut g_l1, mut g_t) = (0.0, 0.0, 0.0);
        for l in 0..lay.n {
            let (d0, d1) = (du[2 * l], du[2 * l + 1]);
            let zi = lay.z + l * lay.k;
            let z0 = theta[zi];
            g_l0 += d0 * self.u0[l];
            if lay.k == 2 {
                let z1 = theta[zi + 1];
                grad[zi] = d0 * self.sd0 + d1 * self.sd1 * rho - z0;
                grad[zi + 1] = d1 * self.sd1 * rc - z1;
                g_l1 += d1 * self.u1[l];
                g_t += d1 * self.sd1 * (z0 * rc * rc - rho * rc * z1);
            } else {
                grad[zi] = d0 * self.sd0 - z0;
            }
        }
        grad[lay.log_sd0] += g_l0;
        if lay.k == 2 {
            grad[lay.log_sd1] += g_l1;
            grad[lay.t_rho] += g_t;
        }
    }
}

fn positive(v: f64, what: &str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(domain(format!("{what} must be positive and finite, got {v}")))
    }
}

impl LogDensity for LmmPosterior {
    fn dim(&self) -> usize {
        self.layout.dim
    }

    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        if theta.iter().any(|t| !t.is_finite()) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            return f64::NEG_INFINITY;
        }
        self.eval(theta, grad)
    }

    fn initial_point(&self, rng: &mut EngineRng) -> Vec<f64> {
        let p = self.sample_prior(rng);
        self.unconstrain(&p).expect("prior draws lie in the support")
    }
}

/// Log joint density and its gradient at an unconstrained point.
pub fn log_joint(theta_unc: &[f64], data: &Dataset, spec: &LmmModelSpec, prior: &PriorSpec) -> Result<(f64, Vec<f64>)> {
    let post = LmmPosterior::new(data, *spec, *prior)?;
    post.check_dim(theta_unc.len())?;
    if let Some(i) = theta_unc.iter().position(|t| !t.is_finite()) {
        return Err(domain(format!("coordinate {i} is not finite")));
    }
    let mut grad = vec![0.0; post.dim()];
    let lp = post.eval(theta_unc, &mut grad);
    Ok((lp, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{NormalPrior, RawRow};
    use crate::rng::stream;
    use proptest::{prop_assert, proptest};

    fn toy_data(items: bool) -> Dataset {
        let mut rng = stream(3, "toy", 0);
        let mut raw = Vec::new();
        for s in 0..4 {
            for i in 0..3 {
                for x in [-1.0, 1.0] {
                    let e: f64 = rng.sample(StandardNormal);
                    raw.push(RawRow { subj: s, item: items.then_some(i), x, rt: (6.0 + 0.1 * x + 0.3 * e).exp() });
                }
            }
        }
        Dataset::from_raw(&raw).unwrap()
    }

    fn finite_diff_check(post: &LmmPosterior, seed: u64) {
        let mut rng = stream(seed, "fd", 0);
        let mut grad = vec![0.0; post.dim()];
        let mut scratch = vec![0.0; post.dim()];
        for _ in 0..100 {
            let theta: Vec<f64> = (0..post.dim()).map(|_| rng.random_range(-1.5..1.5)).collect();
            post.log_density_grad(&theta, &mut grad);
            for j in 0..post.dim() {
                let h = 1e-6;
                let mut tp = theta.clone();
                tp[j] += h;
                let fp = post.log_density_grad(&tp, &mut scratch);
                tp[j] -= 2.0 * h;
                let fm = post.log_density_grad(&tp, &mut scratch);
                let fd = (fp - fm) / (2.0 * h);
                let err = (fd - grad[j]).abs() / grad[j].abs().max(1.0);
                assert!(err < 1e-5, "coord {j}: analytic {} vs fd {fd}", grad[j]);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let prior = PriorSpec::calibration_default();
        for items in [false, true] {
            let data = toy_data(items);
            for spec in [
                LmmModelSpec::maximal(items),
                LmmModelSpec::maximal(items).null(),
                LmmModelSpec::intercepts_only(items),
            ] {
                finite_diff_check(&LmmPosterior::new(&data, spec, prior).unwrap(), 7);
            }
        }
    }

    #[test]
    fn transform_round_trip() {
        let data = toy_data(true);
        let post = LmmPosterior::new(&data, LmmModelSpec::maximal(true), PriorSpec::calibration_default()).unwrap();
        let mut rng = stream(5, "rt", 0);
        for _ in 0..100 {
            let theta: Vec<f64> = (0..post.dim()).map(|_| rng.random_range(-3.0..3.0)).collect();
            let back = post.unconstrain(&post.constrain(&theta).unwrap()).unwrap();
            for (a, b) in theta.iter().zip(&back) {
                assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn single_observation_likelihood_term() {
        let rt = 6f64.exp();
        let data = Dataset::from_raw(&[RawRow { subj: 0, item: None, x: 1.0, rt }]).unwrap();
        let spec = LmmModelSpec { include_slope: true, subject: RandomEffects::Intercept, item: RandomEffects::None };
        let prior = PriorSpec::calibration_default();
        let post = LmmPosterior::new(&data, spec, prior).unwrap();
        // beta0 = 6, beta1 = 0, log sd = 0, log sigma = 0, z = 0
        let theta = vec![6.0, 0.0, 0.0, 0.0, 0.0];
        let lp = post.log_density(&theta);
        let prior_part = prior.intercept.lpdf(6.0)
            + prior.slope.unwrap().lpdf(0.0)
            + prior.sd.lpdf(1.0)
            + prior.sigma.lpdf(1.0)
            + crate::math::normal_lpdf(0.0, 0.0, 1.0);
        let lik = lp - prior_part;
        assert!((lik - (-rt.ln() - LN_SQRT_2PI)).abs() < 1e-12);
    }

    #[test]
    fn density_collapses_as_sigma_shrinks() {
        let data = toy_data(false);
        let post = LmmPosterior::new(&data, LmmModelSpec::maximal(false), PriorSpec::calibration_default()).unwrap();
        let mut theta = vec![0.0; post.dim()];
        theta[0] = 6.0;
        let idx = post.layout.log_sigma;
        let mut last = f64::INFINITY;
        for ls in [-2.0, -4.0, -6.0, -8.0] {
            theta[idx] = ls;
            let lp = post.log_density(&theta);
            assert!(lp < last);
            last = lp;
        }
    }

    #[test]
    fn jacobian_gives_same_integral_on_either_scale() {
        // Vary only sigma; everything else fixed.
        let data = toy_data(false);
        let spec = LmmModelSpec::intercepts_only(false);
        let post = LmmPosterior::new(&data, spec, PriorSpec::calibration_default()).unwrap();
        let mut theta = vec![0.0; post.dim()];
        theta[0] = 6.0;
        let idx = post.layout.log_sigma;
        let at = |ls: f64| {
            let mut t = theta.clone();
            t[idx] = ls;
            post.log_density(&t)
        };
        let shift = at(-1.0);
        let n = 200_000;
        let (a, b) = (-12.0f64, 4.0f64);
        let h = (b - a) / n as f64;
        let unc: f64 = (0..=n).map(|i| (at(a + i as f64 * h) - shift).exp()).sum::<f64>() * h;
        // constrained density = unconstrained density / |d sigma / d l| = exp(lp - l)
        let (sa, sb) = (a.exp(), b.exp());
        let hs = (sb - sa) / n as f64;
        let con: f64 = (0..=n)
            .map(|i| {
                let s = sa + i as f64 * hs;
                (at(s.ln()) - s.ln() - shift).exp()
            })
            .sum::<f64>()
            * hs;
        assert!((unc - con).abs() / unc < 1e-4, "{unc} vs {con}");
    }

    #[test]
    fn public_log_joint_errors() {
        let data = toy_data(false);
        let spec = LmmModelSpec::maximal(false);
        let prior = PriorSpec::calibration_default();
        assert!(matches!(log_joint(&[0.0; 3], &data, &spec, &prior), Err(crate::Error::Structural(_))));
        let dim = LmmPosterior::new(&data, spec, prior).unwrap().dim();
        let mut theta = vec![0.0; dim];
        theta[2] = f64::NAN;
        assert!(matches!(log_joint(&theta, &data, &spec, &prior), Err(crate::Error::Domain(_))));
        theta[2] = 0.0;
        let (lp, g) = log_joint(&theta, &data, &spec, &prior).unwrap();
        assert!(lp.is_finite() && g.len() == dim);
    }

    #[test]
    fn slope_requires_prior_component() {
        let data = toy_data(false);
        let prior = PriorSpec::calibration_default().without_slope();
        assert!(LmmPosterior::new(&data, LmmModelSpec::maximal(false), prior).is_err());
        assert!(LmmPosterior::new(&data, LmmModelSpec::maximal(false).null(), prior).is_ok());
        let p = PriorSpec::calibration_default().with_slope(NormalPrior::new(0.0, 2.0));
        let post = LmmPosterior::new(&data, LmmModelSpec::maximal(false), p).unwrap();
        let d = post.slope_prior_density_at_zero().unwrap();
        assert!((d - 1.0 / (2.0 * (2.0 * std::f64::consts::PI).sqrt())).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn log_density_finite_for_moderate_inputs(seed in 0u64..1000) {
            let data = toy_data(true);
            let post = LmmPosterior::new(&data, LmmModelSpec::maximal(true), PriorSpec::calibration_default()).unwrap();
            let mut rng = stream(seed, "finite", 0);
            let theta: Vec<f64> = (0..post.dim()).map(|_| rng.random_range(-5.0..5.0)).collect();
            prop_assert!(post.log_density(&theta).is_finite());
        }
    }
}
