use bfwork_core::calibration::{
    even_prior_grid, prior_probability_sweep, run_sbc, run_sbc_with, sbc_prior_recovery, sbc_truth_table,
    ConjugateMethod, ConjugatePipeline, SbcConfig,
};
use bfwork_core::design::DesignSpec;
use bfwork_core::fit::BfMethod;
use bfwork_core::inference::{Hypothesis, ModelPrior};
use bfwork_core::marginal::DensityEstimator;
use bfwork_core::sampler::SamplerConfig;

#[test]
fn analytic_pipeline_recovers_prior() {
    let ens = run_sbc_with(&ConjugatePipeline::default(), 500, ModelPrior::even(), 1).unwrap();
    assert_eq!(ens.runs.len(), 500);
    assert_eq!(ens.n_failures(), 0);
    let rec = sbc_prior_recovery(&ens).unwrap();
    assert!(rec.pass, "{rec:?}");
    assert!(rec.resolution() < 0.05);
    let t = sbc_truth_table(&ens);
    for truth in [Hypothesis::H0, Hypothesis::H1] {
        let row = t.row(truth).unwrap();
        assert!((row.p_h0 + row.p_h1 - 100.0).abs() < 1e-9);
        assert!(row.correct(truth) > 50.0);
    }
    let skewed = run_sbc_with(&ConjugatePipeline::default(), 500, ModelPrior::with_p_h1(0.2).unwrap(), 2).unwrap();
    assert!(sbc_prior_recovery(&skewed).unwrap().pass);
}

#[test]
fn sweep_follows_the_diagonal() {
    let sweep = prior_probability_sweep(&ConjugatePipeline::default(), &even_prior_grid(500), 50, 3).unwrap();
    assert_eq!(sweep.points.len(), 10);
    assert!((0.9..=1.1).contains(&sweep.slope), "{}", sweep.slope);
    let mut csv = Vec::new();
    sweep.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 11);
}

#[test]
fn sweep_bin_at_one_half_matches_recovery() {
    let grid = vec![0.5; 100];
    let sweep = prior_probability_sweep(&ConjugatePipeline::default(), &grid, 100, 4).unwrap();
    let rec = sbc_prior_recovery(&sweep.ensemble).unwrap();
    assert!((sweep.points[0].post_p_h0 - (1.0 - rec.mean_p_h1)).abs() < 1e-12);
}

#[test]
fn estimators_agree_when_posterior_overlaps_zero() {
    let sampler = SamplerConfig { warmup: 1000, iter: 4000, ..SamplerConfig::default() };
    let pipe = |method| ConjugatePipeline {
        method: ConjugateMethod::Sampled { method, sampler: sampler.clone() },
        ..ConjugatePipeline::default()
    };
    let br = run_sbc_with(&pipe(BfMethod::Bridge), 40, ModelPrior::even(), 5).unwrap();
    let sd =
        run_sbc_with(&pipe(BfMethod::SavageDickey(DensityEstimator::NormalApprox)), 40, ModelPrior::even(), 5).unwrap();
    let exact = run_sbc_with(&ConjugatePipeline::default(), 40, ModelPrior::even(), 5).unwrap();
    let mut compared = 0;
    for ((a, b), e) in br.runs.iter().zip(&sd.runs).zip(&exact.runs) {
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.params, b.params);
        // overlap: BF within a factor of 20 of one
        if e.log_bf10.unwrap().abs() < 3.0 {
            let ratio = (a.log_bf10.unwrap() - b.log_bf10.unwrap()).exp();
            assert!((ratio - 1.0).abs() < 0.25, "run {}: {ratio}", a.index);
            compared += 1;
        }
    }
    assert!(compared > 20);
}

fn small_lmm_config(n_runs: usize) -> SbcConfig {
    SbcConfig {
        n_runs,
        sampler: SamplerConfig { warmup: 300, iter: 500, ..SamplerConfig::default() },
        design: DesignSpec { n_subjects: 6, ..DesignSpec::default() },
        seed: 17,
        ..SbcConfig::default()
    }
}

#[test]
fn lmm_ensemble_is_deterministic_across_worker_counts() {
    let cfg = small_lmm_config(4);
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| run_sbc(&cfg).unwrap());
    let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap().install(|| run_sbc(&cfg).unwrap());
    assert_eq!(one, three);
    assert_eq!(one.config.as_ref(), Some(&cfg));
    for r in &one.runs {
        assert!(r.params.contains_key("subj_rho"));
        if r.truth == Hypothesis::H0 {
            assert_eq!(r.params["beta1"], 0.0);
        }
        if let Some(p) = r.p_h1_post {
            assert!((0.0..=1.0).contains(&p));
        }
    }
}

#[test]
fn invalid_configs() {
    let mut cfg = small_lmm_config(0);
    assert!(run_sbc(&cfg).is_err());
    cfg.n_runs = 1;
    cfg.fit_spec = bfwork_core::model::LmmModelSpec::maximal(true);
    assert!(run_sbc(&cfg).is_err());
}
