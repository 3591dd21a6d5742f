mod common;

use common::{contrasts, dataset};
use nma_core::bootstrap::{self, replicate_rng, BootstrapConfig, StatisticId};
use nma_core::diagnostics::TemporaryReference;
use nma_core::{Error, Method, Model};

const RULE: TemporaryReference = TemporaryReference::LowestIndex;

fn config(replicates: usize, seed: u64) -> BootstrapConfig {
    BootstrapConfig {
        replicates,
        seed,
        ..BootstrapConfig::default()
    }
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let ds = dataset();
    let c = contrasts(&ds);
    let model = Model::new(ds.treatments.p());
    let fit = model.fit(&c, Method::Reml).unwrap();
    let cfg = config(24, 7);
    let run = || bootstrap::bootstrap_loo(&model, &c, &fit, RULE, &cfg).unwrap();
    let one = in_pool(1, run);
    let four = in_pool(4, run);
    assert_eq!(one, four);
    let serial = bootstrap::bootstrap_loo(
        &model,
        &c,
        &fit,
        RULE,
        &BootstrapConfig { parallel: false, ..cfg.clone() },
    )
    .unwrap();
    assert_eq!(one, serial);

    let lrt = || bootstrap::bootstrap_lrt(&model, &c, 26, RULE, &cfg).unwrap();
    assert_eq!(in_pool(1, lrt), in_pool(3, lrt));
}

#[test]
fn seed_controls_the_draws() {
    let ds = dataset();
    let c = contrasts(&ds);
    let model = Model::new(ds.treatments.p());
    let a = bootstrap::bootstrap_lrt(&model, &c, 24, RULE, &config(16, 3)).unwrap();
    let b = bootstrap::bootstrap_lrt(&model, &c, 24, RULE, &config(16, 3)).unwrap();
    let other = bootstrap::bootstrap_lrt(&model, &c, 24, RULE, &config(16, 4)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.observed, other.observed);
    assert_ne!(a.distribution.samples, other.distribution.samples);
}

#[test]
fn resampled_contrasts_follow_the_fitted_model() {
    let ds = dataset();
    let c = contrasts(&ds);
    let fit = Model::new(ds.treatments.p()).fit(&c, Method::Reml).unwrap();
    let b = 2400;
    let draws: Vec<Vec<f64>> = (0..b)
        .map(|i| {
            let mut rng = replicate_rng(11, 1, i);
            let sample = bootstrap::resample_dataset(&c, &fit, &mut rng).unwrap();
            sample.iter().map(|t| t.y[0]).collect()
        })
        .collect();
    for (k, trial) in c.iter().enumerate() {
        let (mean, _) = fit.project(&trial.treatments, trial.reference).unwrap();
        let var = trial.s[(0, 0)] + fit.tau2;
        let xs: Vec<f64> = draws.iter().map(|d| d[k]).collect();
        let m = xs.iter().sum::<f64>() / b as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (b - 1) as f64;
        let se = (var / b as f64).sqrt();
        assert!((m - mean[0]).abs() < 4.0 * se, "trial {}: mean {m} vs {}", trial.trial_id, mean[0]);
        let se_var = var * (2.0 / (b - 1) as f64).sqrt();
        assert!((v - var).abs() < 5.0 * se_var, "trial {}: var {v} vs {var}", trial.trial_id);
    }
}

#[test]
fn single_replicate() {
    let ds = dataset();
    let c = contrasts(&ds);
    let model = Model::new(ds.treatments.p());
    let r = bootstrap::bootstrap_lrt(&model, &c, 26, RULE, &config(1, 1)).unwrap();
    assert_eq!(r.distribution.samples.len(), 1);
    let t = r.distribution.samples[0];
    for &(_, v) in &r.distribution.percentiles {
        assert_eq!(v, t);
    }
    let expected = if t >= r.observed { 1.0 } else { 0.5 };
    assert_eq!(r.p_value, expected);
}

#[test]
fn every_statistic_gets_a_distribution() {
    let ds = dataset();
    let c = contrasts(&ds);
    let model = Model::new(ds.treatments.p());
    let fit = model.fit(&c, Method::Reml).unwrap();
    let loo = bootstrap::bootstrap_loo(&model, &c, &fit, RULE, &config(8, 2)).unwrap();
    assert_eq!(loo.covratio.len(), 26);
    assert_eq!(loo.psiratio.len(), 26);
    assert_eq!(loo.residuals.len(), 28);
    for d in loo.covratio.values().chain(loo.psiratio.values()) {
        assert_eq!(d.samples.len() + d.undefined + d.failures, 8);
    }
    let allhat = StatisticId::CovRatio { trial_id: 11 };
    assert_eq!(loo.covratio[&11].statistic, allhat);
    assert!(loo.covratio[&11].samples.is_empty());
    assert!(loo.covratio[&11].percentiles.is_empty());
}

#[test]
fn invalid_configuration_is_rejected() {
    let ds = dataset();
    let c = contrasts(&ds);
    let model = Model::new(ds.treatments.p());
    let zero = bootstrap::bootstrap_lrt(&model, &c, 1, RULE, &config(0, 1));
    assert!(matches!(zero, Err(Error::Config(_))));
    let unknown = bootstrap::bootstrap_lrt(&model, &c, 99, RULE, &config(4, 1));
    assert!(matches!(unknown, Err(Error::UnknownTrial(99))));
}
