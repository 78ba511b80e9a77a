//! One transition of the no-U-turn sampler with multinomial trajectory sampling
//! and a diagonal metric.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::math::log_add_exp;
use crate::model::LogDensity;
use crate::rng::EngineRng;

const MAX_DELTA_H: f64 = 1000.0;

#[derive(Debug, Clone)]
pub(crate) struct Point {
    pub q: Vec<f64>,
    pub grad: Vec<f64>,
    pub lp: f64,
}

impl Point {
    pub fn new(q: Vec<f64>, model: &impl LogDensity) -> Self {
        let mut grad = vec![0.0; q.len()];
        let lp = model.log_density_grad(&q, &mut grad);
        Self { q, grad, lp }
    }

    fn assign(&mut self, other: &Point) {
        self.q.copy_from_slice(&other.q);
        self.grad.copy_from_slice(&other.grad);
        self.lp = other.lp;
    }
}

/// Position plus momentum.
#[derive(Debug, Clone)]
struct Phase {
    pt: Point,
    p: Vec<f64>,
}

impl Phase {
    fn assign(&mut self, other: &Phase) {
        self.pt.assign(&other.pt);
        self.p.copy_from_slice(&other.p);
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct TransitionStats {
    pub accept_stat: f64,
    pub n_leapfrog: usize,
    pub depth: usize,
    pub divergent: bool,
}

/// Scratch vectors used by one level of the tree recursion.
#[derive(Debug, Clone)]
struct Frame {
    rho_init: Vec<f64>,
    rho_final: Vec<f64>,
    rho_ext: Vec<f64>,
    p_init_end: Vec<f64>,
    p_sharp_init_end: Vec<f64>,
    p_final_beg: Vec<f64>,
    p_sharp_final_beg: Vec<f64>,
    propose_final: Point,
}

impl Frame {
    fn new(dim: usize) -> Self {
        let z = vec![0.0; dim];
        Self {
            rho_init: z.clone(),
            rho_final: z.clone(),
            rho_ext: z.clone(),
            p_init_end: z.clone(),
            p_sharp_init_end: z.clone(),
            p_final_beg: z.clone(),
            p_sharp_final_beg: z.clone(),
            propose_final: Point { q: z.clone(), grad: z, lp: f64::NEG_INFINITY },
        }
    }
}

/// Reusable buffers for transitions of one chain.
pub(crate) struct Workspace {
    dim: usize,
    fwd: Phase,
    bck: Phase,
    propose: Point,
    p_fwd_fwd: Vec<f64>,
    p_sharp_fwd_fwd: Vec<f64>,
    p_fwd_bck: Vec<f64>,
    p_sharp_fwd_bck: Vec<f64>,
    p_bck_fwd: Vec<f64>,
    p_sharp_bck_fwd: Vec<f64>,
    p_bck_bck: Vec<f64>,
    p_sharp_bck_bck: Vec<f64>,
    rho: Vec<f64>,
    rho_fwd: Vec<f64>,
    rho_bck: Vec<f64>,
    rho_ext: Vec<f64>,
    frames: Vec<Frame>,
}

impl Workspace {
    pub fn new(dim: usize, max_depth: usize) -> Self {
        let z = vec![0.0; dim];
        let pt = Point { q: z.clone(), grad: z.clone(), lp: 0.0 };
        let phase = Phase { pt: pt.clone(), p: z.clone() };
        Self {
            dim,
            fwd: phase.clone(),
            bck: phase,
            propose: pt,
            p_fwd_fwd: z.clone(),
            p_sharp_fwd_fwd: z.clone(),
            p_fwd_bck: z.clone(),
            p_sharp_fwd_bck: z.clone(),
            p_bck_fwd: z.clone(),
            p_sharp_bck_fwd: z.clone(),
            p_bck_bck: z.clone(),
            p_sharp_bck_bck: z.clone(),
            rho: z.clone(),
            rho_fwd: z.clone(),
            rho_bck: z.clone(),
            rho_ext: z,
            frames: (0..max_depth).map(|_| Frame::new(dim)).collect(),
        }
    }
}

struct Ctx<'a, M> {
    model: &'a M,
    inv_metric: &'a [f64],
    eps: f64,
    h0: f64,
    n_leapfrog: usize,
    sum_metro: f64,
    divergent: bool,
}

fn kinetic(p: &[f64], inv_metric: &[f64]) -> f64 {
    0.5 * p.iter().zip(inv_metric).map(|(p, m)| p * p * m).sum::<f64>()
}

fn hamiltonian(z: &Phase, inv_metric: &[f64]) -> f64 {
    let h = -z.pt.lp + kinetic(&z.p, inv_metric);
    if h.is_nan() {
        f64::INFINITY
    } else {
        h
    }
}

fn leapfrog(z: &mut Phase, model: &impl LogDensity, inv_metric: &[f64], eps: f64) {
    for (p, g) in z.p.iter_mut().zip(&z.pt.grad) {
        *p += 0.5 * eps * g;
    }
    for ((q, p), m) in z.pt.q.iter_mut().zip(&z.p).zip(inv_metric) {
        *q += eps * m * p;
    }
    z.pt.lp = model.log_density_grad(&z.pt.q, &mut z.pt.grad);
    if !z.pt.lp.is_finite() {
        return;
    }
    for (p, g) in z.p.iter_mut().zip(&z.pt.grad) {
        *p += 0.5 * eps * g;
    }
}

fn sample_momentum(p: &mut [f64], inv_metric: &[f64], rng: &mut EngineRng) {
    for (p, m) in p.iter_mut().zip(inv_metric) {
        let z: f64 = rng.sample(StandardNormal);
        *p = z / m.sqrt();
    }
}

fn sharp(out: &mut [f64], p: &[f64], inv_metric: &[f64]) {
    for ((o, p), m) in out.iter_mut().zip(p).zip(inv_metric) {
        *o = p * m;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

fn no_u_turn(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

fn add_into(out: &mut [f64], a: &[f64], b: &[f64]) {
    for ((o, a), b) in out.iter_mut().zip(a).zip(b) {
        *o = a + b;
    }
}

/// Builds a subtree of `2^depth` leapfrog steps from the current state `z`,
/// which ends at the far edge of the subtree. Returns false on divergence or a U-turn.
#[allow(clippy::too_many_arguments)]
fn build_tree<M: LogDensity>(
    ctx: &mut Ctx<'_, M>,
    frames: &mut [Frame],
    rng: &mut EngineRng,
    depth: usize,
    z: &mut Phase,
    propose: &mut Point,
    p_sharp_beg: &mut [f64],
    p_sharp_end: &mut [f64],
    rho: &mut [f64],
    p_beg: &mut [f64],
    p_end: &mut [f64],
    log_sum_weight: &mut f64,
) -> bool {
    if depth == 0 {
        leapfrog(z, ctx.model, ctx.inv_metric, ctx.eps);
        ctx.n_leapfrog += 1;
        let h = hamiltonian(z, ctx.inv_metric);
        if h - ctx.h0 > MAX_DELTA_H {
            ctx.divergent = true;
        }
        let dh = ctx.h0 - h;
        *log_sum_weight = log_add_exp(*log_sum_weight, dh);
        ctx.sum_metro += if dh > 0.0 { 1.0 } else { dh.exp() };
        propose.assign(&z.pt);
        sharp(p_sharp_beg, &z.p, ctx.inv_metric);
        p_sharp_end.copy_from_slice(p_sharp_beg);
        for (r, p) in rho.iter_mut().zip(&z.p) {
            *r += p;
        }
        p_beg.copy_from_slice(&z.p);
        p_end.copy_from_slice(&z.p);
        return !ctx.divergent;
    }

    let (lower, upper) = frames.split_at_mut(depth - 1);
    let f = &mut upper[0];
    f.rho_init.iter_mut().for_each(|v| *v = 0.0);
    f.rho_final.iter_mut().for_each(|v| *v = 0.0);

    let mut lsw_init = f64::NEG_INFINITY;
    if !build_tree(
        ctx,
        lower,
        rng,
        depth - 1,
        z,
        propose,
        p_sharp_beg,
        &mut f.p_sharp_init_end,
        &mut f.rho_init,
        p_beg,
        &mut f.p_init_end,
        &mut lsw_init,
    ) {
        return false;
    }

    let mut lsw_final = f64::NEG_INFINITY;
    if !build_tree(
        ctx,
        lower,
        rng,
        depth - 1,
        z,
        &mut f.propose_final,
        &mut f.p_sharp_final_beg,
        p_sharp_end,
        &mut f.rho_final,
        &mut f.p_final_beg,
        p_end,
        &mut lsw_final,
    ) {
        return false;
    }

    let lsw_subtree = log_add_exp(lsw_init, lsw_final);
    *log_sum_weight = log_add_exp(*log_sum_weight, lsw_subtree);
    if lsw_final > lsw_subtree || rng.random::<f64>() < (lsw_final - lsw_subtree).exp() {
        propose.assign(&f.propose_final);
    }

    // U-turn checks across the seam between the two halves
    add_into(&mut f.rho_ext, &f.rho_init, &f.p_final_beg);
    let mut persist = no_u_turn(p_sharp_beg, &f.p_sharp_final_beg, &f.rho_ext);
    add_into(&mut f.rho_ext, &f.rho_final, &f.p_init_end);
    persist &= no_u_turn(&f.p_sharp_init_end, p_sharp_end, &f.rho_ext);

    add_into(&mut f.rho_ext, &f.rho_init, &f.rho_final);
    for (r, s) in rho.iter_mut().zip(&f.rho_ext) {
        *r += s;
    }
    persist &= no_u_turn(p_sharp_beg, p_sharp_end, &f.rho_ext);
    persist
}

/// One NUTS transition starting from `current`, which is replaced by the selected point.
pub(crate) fn transition<M: LogDensity>(
    model: &M,
    current: &mut Point,
    inv_metric: &[f64],
    eps: f64,
    max_depth: usize,
    ws: &mut Workspace,
    rng: &mut EngineRng,
) -> TransitionStats {
    let dim = ws.dim;
    ws.fwd.pt.assign(current);
    sample_momentum(&mut ws.fwd.p, inv_metric, rng);
    let p0 = ws.fwd.p.clone();
    ws.bck.assign(&ws.fwd);
    for buf in [&mut ws.p_fwd_fwd, &mut ws.p_fwd_bck, &mut ws.p_bck_fwd, &mut ws.p_bck_bck, &mut ws.rho] {
        buf.copy_from_slice(&p0);
    }
    sharp(&mut ws.p_sharp_fwd_fwd, &p0, inv_metric);
    for buf in [&mut ws.p_sharp_fwd_bck, &mut ws.p_sharp_bck_fwd, &mut ws.p_sharp_bck_bck] {
        buf.copy_from_slice(&ws.p_sharp_fwd_fwd);
    }

    let mut ctx = Ctx {
        model,
        inv_metric,
        eps,
        h0: hamiltonian(&ws.fwd, inv_metric),
        n_leapfrog: 0,
        sum_metro: 0.0,
        divergent: false,
    };
    let mut log_sum_weight = 0.0;
    let mut depth = 0;
    while depth < max_depth {
        ws.rho_fwd.iter_mut().for_each(|v| *v = 0.0);
        ws.rho_bck.iter_mut().for_each(|v| *v = 0.0);
        let mut lsw_subtree = f64::NEG_INFINITY;
        let valid = if rng.random::<f64>() > 0.5 {
            ctx.eps = eps;
            ws.rho_bck.copy_from_slice(&ws.rho);
            ws.p_bck_fwd.copy_from_slice(&ws.p_fwd_fwd);
            ws.p_sharp_bck_fwd.copy_from_slice(&ws.p_sharp_fwd_fwd);
            build_tree(
                &mut ctx,
                &mut ws.frames,
                rng,
                depth,
                &mut ws.fwd,
                &mut ws.propose,
                &mut ws.p_sharp_fwd_bck,
                &mut ws.p_sharp_fwd_fwd,
                &mut ws.rho_fwd,
                &mut ws.p_fwd_bck,
                &mut ws.p_fwd_fwd,
                &mut lsw_subtree,
            )
        } else {
            ctx.eps = -eps;
            ws.rho_fwd.copy_from_slice(&ws.rho);
            ws.p_fwd_bck.copy_from_slice(&ws.p_bck_bck);
            ws.p_sharp_fwd_bck.copy_from_slice(&ws.p_sharp_bck_bck);
            build_tree(
                &mut ctx,
                &mut ws.frames,
                rng,
                depth,
                &mut ws.bck,
                &mut ws.propose,
                &mut ws.p_sharp_bck_fwd,
                &mut ws.p_sharp_bck_bck,
                &mut ws.rho_bck,
                &mut ws.p_bck_fwd,
                &mut ws.p_bck_bck,
                &mut lsw_subtree,
            )
        };
        if !valid {
            break;
        }
        depth += 1;
        if lsw_subtree > log_sum_weight || rng.random::<f64>() < (lsw_subtree - log_sum_weight).exp() {
            current.assign(&ws.propose);
        }
        log_sum_weight = log_add_exp(log_sum_weight, lsw_subtree);

        add_into(&mut ws.rho, &ws.rho_bck, &ws.rho_fwd);
        let mut persist = no_u_turn(&ws.p_sharp_bck_bck, &ws.p_sharp_fwd_fwd, &ws.rho);
        add_into(&mut ws.rho_ext, &ws.rho_bck, &ws.p_fwd_bck);
        persist &= no_u_turn(&ws.p_sharp_bck_bck, &ws.p_sharp_fwd_bck, &ws.rho_ext);
        add_into(&mut ws.rho_ext, &ws.rho_fwd, &ws.p_bck_fwd);
        persist &= no_u_turn(&ws.p_sharp_bck_fwd, &ws.p_sharp_fwd_fwd, &ws.rho_ext);
        if !persist {
            break;
        }
    }
    debug_assert_eq!(current.q.len(), dim);
    TransitionStats {
        accept_stat: if ctx.n_leapfrog > 0 { ctx.sum_metro / ctx.n_leapfrog as f64 } else { 0.0 },
        n_leapfrog: ctx.n_leapfrog,
        depth,
        divergent: ctx.divergent,
    }
}

/// Step-size heuristic: doubles or halves `eps` until the acceptance
/// probability of a single leapfrog step crosses 0.8.
pub(crate) fn init_stepsize<M: LogDensity>(
    model: &M,
    current: &Point,
    inv_metric: &[f64],
    mut eps: f64,
    rng: &mut EngineRng,
) -> f64 {
    let dim = current.q.len();
    let mut z = Phase { pt: current.clone(), p: vec![0.0; dim] };
    let delta = |eps: f64, z: &mut Phase, rng: &mut EngineRng| {
        z.pt.assign(current);
        sample_momentum(&mut z.p, inv_metric, rng);
        let h0 = hamiltonian(z, inv_metric);
        leapfrog(z, model, inv_metric, eps);
        h0 - hamiltonian(z, inv_metric)
    };
    let target = 0.8f64.ln();
    let up = delta(eps, &mut z, rng) > target;
    for _ in 0..100 {
        eps = if up { 2.0 * eps } else { 0.5 * eps };
        let d = delta(eps, &mut z, rng);
        if (up && !(d > target)) || (!up && !(d < target)) {
            break;
        }
        if !(1e-10..=1e7).contains(&eps) {
            break;
        }
    }
    eps.clamp(1e-10, 1e7)
}
