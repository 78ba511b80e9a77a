use bfwork_core::fit::{nested_bayes_factor, seeded, BfMethod};
use bfwork_core::marginal::{
    bayes_factor, bridge_log_ml, bridge_log_ml_with_proposal, log_ml, savage_dickey_bf01, BridgeConfig,
    DensityEstimator, LogMlEstimate, MvNormal,
};
use bfwork_core::math::{normal_lpdf, sd};
use bfwork_core::model::ConjugateModel;
use bfwork_core::rng::stream;
use bfwork_core::sampler::{sample_posterior, SamplerConfig};
use rand::Rng;
use rand_distr::StandardNormal;

fn data(mean: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, "data", 0);
    (0..n).map(|_| mean + rng.sample::<f64, _>(StandardNormal)).collect()
}

fn sampler(iter: usize, seed: u64) -> SamplerConfig {
    SamplerConfig { warmup: 1000, iter, seed, ..SamplerConfig::default() }
}

#[test]
fn bridge_matches_closed_form() {
    let model = ConjugateModel::new(0.0, 1.0, 1.0, data(0.3, 10, 1));
    let chains = sample_posterior(&model, &sampler(8000, 2)).unwrap();
    let est = bridge_log_ml(&chains, &model, &BridgeConfig::default()).unwrap();
    assert!(est.converged);
    assert!(!est.low_draw_warning);
    assert!((est.log_ml - model.analytic_log_marginal()).abs() < 0.01, "{est:?}");
}

#[test]
fn proposal_seed_variation_is_small() {
    let model = ConjugateModel::new(0.0, 1.0, 1.0, data(0.3, 10, 1));
    let chains = sample_posterior(&model, &sampler(8000, 3)).unwrap();
    let est: Vec<f64> = (0..20)
        .map(|s| bridge_log_ml(&chains, &model, &BridgeConfig { seed: s, ..BridgeConfig::default() }).unwrap().log_ml)
        .collect();
    assert!(sd(&est) < 0.005, "{}", sd(&est));
}

#[test]
fn few_draws_are_flagged() {
    let model = ConjugateModel::new(0.0, 1.0, 1.0, data(0.3, 10, 1));
    let chains =
        sample_posterior(&model, &SamplerConfig { warmup: 200, iter: 200, ..SamplerConfig::default() }).unwrap();
    let est = bridge_log_ml(&chains, &model, &BridgeConfig::default()).unwrap();
    assert!(est.low_draw_warning);
}

#[test]
fn savage_dickey_identity() {
    // posterior overlapping zero
    let h1 = ConjugateModel::new(0.0, 1.0, 1.0, data(0.2, 10, 4));
    let h0 = h1.null();
    let exact = h1.analytic_log_marginal() - h0.analytic_log_marginal();
    let dens0 = normal_lpdf(0.0, 0.0, 1.0).exp();
    let cfg = sampler(8000, 5);
    let sd_bf = nested_bayes_factor(
        &h1,
        &h0,
        Some((0, dens0)),
        &cfg,
        BfMethod::SavageDickey(DensityEstimator::NormalApprox),
        7,
    )
    .unwrap()
    .bf;
    let br = nested_bayes_factor(&h1, &h0, Some((0, dens0)), &cfg, BfMethod::Bridge, 7).unwrap().bf;
    let kde = nested_bayes_factor(&h1, &h0, Some((0, dens0)), &cfg, BfMethod::SavageDickey(DensityEstimator::Kde), 7)
        .unwrap()
        .bf;
    for b in [&sd_bf, &br, &kde] {
        assert!(!b.unstable);
        assert!(((b.log_bf10 - exact).exp() - 1.0).abs() < 0.1, "{} vs {exact}", b.log_bf10);
    }
    assert!(((sd_bf.log_bf10 - br.log_bf10).exp() - 1.0).abs() < 0.1);
    assert!((h1.analytic_savage_dickey_bf01().ln() + exact).abs() < 1e-10);
}

#[test]
fn affine_reparameterization_leaves_estimate_unchanged() {
    // a skewed two-dimensional target: x0 ~ Gamma(3, 1), x1 | x0 ~ N(x0, 1)
    let log_p = |x: &[f64]| {
        if x[0] <= 0.0 {
            return f64::NEG_INFINITY;
        }
        2.0 * x[0].ln() - x[0] - (2.0f64).ln() + normal_lpdf(x[1], x[0], 1.0)
    };
    let mut rng = stream(11, "affine", 0);
    let gamma = rand_distr::Gamma::new(3.0, 1.0).unwrap();
    let draws: Vec<Vec<f64>> = (0..4000)
        .map(|_| {
            let g: f64 = rng.sample(gamma);
            vec![g, g + rng.sample::<f64, _>(StandardNormal)]
        })
        .collect();
    // lower triangular with positive diagonal, so the Cholesky factor maps along
    let a = [[2.0, 0.0], [-0.7, 0.5]];
    let b = [3.0, -1.0];
    let log_det = (2.0f64 * 0.5).ln();
    let fwd = |x: &[f64]| vec![a[0][0] * x[0] + b[0], a[1][0] * x[0] + a[1][1] * x[1] + b[1]];
    let inv = |y: &[f64]| {
        let x0 = (y[0] - b[0]) / a[0][0];
        vec![x0, (y[1] - b[1] - a[1][0] * x0) / a[1][1]]
    };
    let ys: Vec<Vec<f64>> = draws.iter().map(|x| fwd(x)).collect();
    let log_q = move |y: &[f64]| log_p(&inv(y)) - log_det;
    let cfg = BridgeConfig::default();
    let px = MvNormal::fit(draws.iter().map(|v| v.as_slice()), 2).unwrap();
    let py = MvNormal::fit(ys.iter().map(|v| v.as_slice()), 2).unwrap();
    let ex = bridge_log_ml_with_proposal(&draws, &log_p, &px, &cfg).unwrap();
    let ey = bridge_log_ml_with_proposal(&ys, &log_q, &py, &cfg).unwrap();
    assert!((ex.log_ml - ey.log_ml).abs() < 1e-8, "{} vs {}", ex.log_ml, ey.log_ml);
    assert!(ex.log_ml.abs() < 0.05, "normalized target, got {}", ex.log_ml);
}

#[test]
fn bayes_factor_arithmetic() {
    let a = LogMlEstimate::analytic(-3.0);
    let b = LogMlEstimate::analytic(-3.0 - 10f64.ln());
    assert_eq!(bayes_factor(&a, &a).bf10(), Some(1.0));
    let bf = bayes_factor(&a, &b);
    assert!((bf.bf10().unwrap() - 10.0).abs() < 1e-12);
    assert_eq!(bayes_factor(&b, &a).log_bf10, -bf.log_bf10);
    assert_eq!(bf.inverted().log_bf10, -bf.log_bf10);
    let failed = LogMlEstimate { log_ml: f64::NAN, ..LogMlEstimate::analytic(0.0) };
    assert!(bayes_factor(&a, &failed).is_failure());
    assert_eq!(bayes_factor(&a, &failed).bf10(), None);
}

#[test]
fn parameterless_model_is_exact() {
    let m = ConjugateModel::new(0.0, 1.0, 1.0, data(0.3, 10, 1)).null();
    let est = log_ml(&m, None, &BridgeConfig::default()).unwrap();
    assert!((est.log_ml - m.analytic_log_marginal()).abs() < 1e-10);
}

fn repeat_sd(model: &ConjugateModel, iter: usize, method: BfMethod) -> f64 {
    let h0 = model.null();
    let dens0 = normal_lpdf(0.0, 0.0, model.tau).exp();
    let l: Vec<f64> = (0..20)
        .map(|r| {
            nested_bayes_factor(model, &h0, Some((0, dens0)), &sampler(iter, 100 + r), method, 200 + r)
                .unwrap()
                .bf
                .log_bf10
        })
        .collect();
    sd(&l)
}

#[test]
fn more_draws_and_bridging_reduce_variance() {
    // posterior about five SDs above zero
    let mut y = data(0.0, 10, 8);
    let shift = 5.0 / 10f64.sqrt() - bfwork_core::math::mean(&y);
    y.iter_mut().for_each(|v| *v += shift);
    let model = ConjugateModel::new(0.0, 1.0, 1.0, y);
    let small = repeat_sd(&model, 500, BfMethod::Bridge);
    let large = repeat_sd(&model, 4000, BfMethod::Bridge);
    let kde = repeat_sd(&model, 4000, BfMethod::SavageDickey(DensityEstimator::Kde));
    assert!(large < small, "{large} vs {small}");
    assert!(large < kde, "{large} vs {kde}");
}

#[test]
fn seeded_configs_differ_by_tag() {
    let base = SamplerConfig::default();
    let (a, ba) = seeded(&base, 1, "h1");
    let (b, bb) = seeded(&base, 1, "h0");
    assert_ne!(a.seed, b.seed);
    assert_ne!(ba.seed, bb.seed);
    assert_eq!(seeded(&base, 1, "h1").0, a);
}

#[test]
fn savage_dickey_needs_draws() {
    assert!(savage_dickey_bf01(&[0.1; 10], 0.4, DensityEstimator::NormalApprox).is_err());
}
