//! Parametric bootstrap calibration of the influence measures.
//!
//! Each replicate draws a full dataset from the fitted model, keeping every
//! trial's design and within-trial covariance, and recomputes the statistic
//! on it. Replicate `b` always draws from its own ChaCha stream derived from
//! `(seed, statistic family, b)`, and results are merged in replicate order,
//! so output does not depend on the thread count.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::diagnostics::{self, LooMeasures, PsiRatio, TemporaryReference};
use crate::error::{Context, Error, Result};
use crate::ingest::{ContrastData, TreatmentId};
use crate::linalg;
use crate::model::{marginal_cov, Method, Model, ModelFit};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
    /// Probabilities in `[0, 1]`, ascending.
    pub percentiles: Vec<f64>,
    pub parallel: bool,
    /// Largest tolerated fraction of failed replicates.
    pub max_failure_rate: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replicates: 2400,
            seed: 1,
            percentiles: vec![0.025, 0.05, 0.95, 0.975],
            parallel: true,
            max_failure_rate: 0.01,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Config("bootstrap needs at least one replicate".into()));
        }
        if self
            .percentiles
            .iter()
            .any(|q| !(0.0..=1.0).contains(q))
            || self.percentiles.windows(2).any(|w| w[0] > w[1])
        {
            return Err(Error::Config("percentiles must be sorted and within [0, 1]".into()));
        }
        Ok(())
    }

    fn failure_limit(&self) -> usize {
        (self.max_failure_rate * self.replicates as f64).floor() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum StatisticId {
    Psi {
        trial_id: u32,
        treatment: TreatmentId,
        reference: TreatmentId,
    },
    CovRatio {
        trial_id: u32,
    },
    PsiRatio {
        trial_id: u32,
    },
    Lrt {
        trial_id: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapDistribution {
    pub statistic: StatisticId,
    /// Defined replicate values in replicate order.
    pub samples: Vec<f64>,
    /// Replicates whose refits failed.
    pub failures: usize,
    /// Replicates where the statistic is undefined (PSIRATIO at zero
    /// heterogeneity).
    pub undefined: usize,
    /// `(q, value)` pairs for the configured probabilities.
    pub percentiles: Vec<(f64, f64)>,
}

impl BootstrapDistribution {
    fn new(statistic: StatisticId, samples: Vec<f64>, failures: usize, undefined: usize, qs: &[f64]) -> Self {
        let percentiles = if samples.is_empty() {
            Vec::new()
        } else {
            let mut sorted = samples.clone();
            sorted.sort_by(f64::total_cmp);
            qs.iter().map(|&q| (q, sorted_percentile(&sorted, q))).collect()
        };
        Self {
            statistic,
            samples,
            failures,
            undefined,
            percentiles,
        }
    }

    pub fn percentile(&self, q: f64) -> Result<f64> {
        percentile(&self.samples, q)
    }
}

/// Empirical quantile with linear interpolation at rank `1 + (n - 1) q`.
pub fn percentile(samples: &[f64], q: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Config(format!("percentile probability {q} outside [0, 1]")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted_percentile(&sorted, q))
}

fn sorted_percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `(1 + #{T_b >= T_obs}) / (B + 1)`.
pub fn bootstrap_p_value(samples: &[f64], observed: f64) -> f64 {
    let exceed = samples.iter().filter(|&&t| t >= observed).count();
    (1 + exceed) as f64 / (samples.len() + 1) as f64
}

const DOMAIN_LOO: u64 = 1;
const DOMAIN_LRT: u64 = 2;

/// Independent stream for replicate `index` of a statistic family.
pub fn replicate_rng(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Draws `y_i ~ N(X_i mu, tau2 P + S_i)` for every trial.
pub fn resample_dataset<R: Rng + ?Sized>(
    contrasts: &[ContrastData],
    fit: &ModelFit,
    rng: &mut R,
) -> Result<Vec<ContrastData>> {
    contrasts
        .iter()
        .map(|c| {
            let (mean, _) = fit.project(&c.treatments, c.reference).ok_or_else(|| {
                Error::NotComputable(format!("fit cannot generate trial {}", c.trial_id))
            })?;
            let factor = linalg::cholesky(&marginal_cov(c, fit.tau2), "marginal covariance")?;
            let z = DVector::from_fn(c.observed_count(), |_, _| rng.sample::<f64, _>(StandardNormal));
            Ok(c.with_y(mean + factor.l() * z))
        })
        .collect()
}

fn run_replicates<T, F>(config: &BootstrapConfig, work: F) -> Result<(Vec<T>, usize)>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    config.validate()?;
    let outcomes: Vec<Result<T>> = if config.parallel {
        (0..config.replicates).into_par_iter().map(&work).collect()
    } else {
        (0..config.replicates).map(&work).collect()
    };
    let mut ok = Vec::with_capacity(outcomes.len());
    let mut failed = 0;
    let mut last_error = None;
    for o in outcomes {
        match o {
            Ok(v) => ok.push(v),
            Err(e) => {
                failed += 1;
                last_error = Some(e);
            }
        }
    }
    if failed > config.failure_limit() {
        let err = Error::TooManyFailures {
            failed,
            replicates: config.replicates,
            limit: config.failure_limit(),
        };
        return Err(match last_error {
            Some(e) => Error::Context {
                context: err.to_string(),
                source: Box::new(e),
            },
            None => err,
        });
    }
    Ok((ok, failed))
}

/// Bootstrap distributions of `psi`, COVRATIO and PSIRATIO from one set of
/// replicates drawn from the all-trial REML fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LooBootstrap {
    pub replicates: usize,
    pub failures: usize,
    pub residuals: BTreeMap<StatisticId, BootstrapDistribution>,
    pub covratio: BTreeMap<u32, BootstrapDistribution>,
    pub psiratio: BTreeMap<u32, BootstrapDistribution>,
}

pub fn bootstrap_loo(
    model: &Model,
    contrasts: &[ContrastData],
    reml_fit: &ModelFit,
    rule: TemporaryReference,
    config: &BootstrapConfig,
) -> Result<LooBootstrap> {
    let (reps, failures) = run_replicates(config, |b| {
        let mut rng = replicate_rng(config.seed, DOMAIN_LOO, b as u64);
        let sample = resample_dataset(contrasts, reml_fit, &mut rng)?;
        let fit = model
            .fit(&sample, Method::Reml)
            .context(|| format!("replicate {b}: all-trial REML fit"))?;
        diagnostics::loo_measures(model, &sample, &fit, rule, false)
    })?;

    let qs = &config.percentiles;
    let mut residuals = BTreeMap::new();
    let mut covratio = BTreeMap::new();
    let mut psiratio = BTreeMap::new();
    for (i, c) in contrasts.iter().enumerate() {
        let per_trial: Vec<&LooMeasures> = reps.iter().map(|r| &r[i]).collect();
        let Some(first) = per_trial.first() else {
            continue;
        };
        for (k, &(treatment, reference)) in first.comparisons.iter().enumerate() {
            let id = StatisticId::Psi {
                trial_id: c.trial_id,
                treatment,
                reference,
            };
            let samples: Vec<f64> = per_trial.iter().filter_map(|m| m.psi[k]).collect();
            let undefined = per_trial.len() - samples.len();
            residuals.insert(id, BootstrapDistribution::new(id, samples, failures, undefined, qs));
        }

        let id = StatisticId::CovRatio { trial_id: c.trial_id };
        let samples: Vec<f64> = per_trial.iter().filter_map(|m| m.covratio).collect();
        let undefined = per_trial.len() - samples.len();
        covratio.insert(c.trial_id, BootstrapDistribution::new(id, samples, failures, undefined, qs));

        let id = StatisticId::PsiRatio { trial_id: c.trial_id };
        let samples: Vec<f64> = per_trial
            .iter()
            .filter_map(|m| m.psiratio.and_then(PsiRatio::value))
            .collect();
        let undefined = per_trial.len() - samples.len();
        psiratio.insert(c.trial_id, BootstrapDistribution::new(id, samples, failures, undefined, qs));
    }
    Ok(LooBootstrap {
        replicates: config.replicates,
        failures,
        residuals,
        covratio,
        psiratio,
    })
}

/// Bootstrap distributions of the leave-one-out studentized residuals.
pub fn bootstrap_residuals(
    model: &Model,
    contrasts: &[ContrastData],
    rule: TemporaryReference,
    config: &BootstrapConfig,
) -> Result<BTreeMap<StatisticId, BootstrapDistribution>> {
    let fit = model.fit(contrasts, Method::Reml).context(|| "all-trial REML fit")?;
    Ok(bootstrap_loo(model, contrasts, &fit, rule, config)?.residuals)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TrialMeasure {
    CovRatio,
    PsiRatio,
}

pub fn bootstrap_trial_measures(
    model: &Model,
    contrasts: &[ContrastData],
    rule: TemporaryReference,
    config: &BootstrapConfig,
    which: TrialMeasure,
) -> Result<BTreeMap<u32, BootstrapDistribution>> {
    let fit = model.fit(contrasts, Method::Reml).context(|| "all-trial REML fit")?;
    let all = bootstrap_loo(model, contrasts, &fit, rule, config)?;
    Ok(match which {
        TrialMeasure::CovRatio => all.covratio,
        TrialMeasure::PsiRatio => all.psiratio,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LrtBootstrap {
    pub observed: f64,
    pub distribution: BootstrapDistribution,
    pub p_value: f64,
}

/// Likelihood ratio statistics for the trials at `targets` (indices into
/// `contrasts`). The null ML fit of the unmodified data is reused for trials
/// whose head-to-head coding is their original coding.
fn lrt_statistics(
    model: &Model,
    contrasts: &[ContrastData],
    targets: &[usize],
    rule: TemporaryReference,
) -> Result<Vec<f64>> {
    let mut shared_null: Option<ModelFit> = None;
    let mut out = Vec::with_capacity(targets.len());
    for &i in targets {
        let c = &contrasts[i];
        let coded = rule.head_to_head(c)?;
        let null_loglik = if coded.reference == c.reference {
            if shared_null.is_none() {
                shared_null = Some(model.fit(contrasts, Method::Ml).context(|| "null ML fit")?);
            }
            shared_null.as_ref().map(|f| f.loglik).unwrap_or_default()
        } else {
            let mut data = contrasts.to_vec();
            data[i] = coded.clone();
            model
                .fit(&data, Method::Ml)
                .context(|| format!("null ML fit for trial {}", c.trial_id))?
                .loglik
        };
        let mut data = contrasts.to_vec();
        data[i] = coded;
        let shift = model
            .fit_mean_shift(&data, c.trial_id)
            .context(|| format!("mean-shift ML fit for trial {}", c.trial_id))?;
        out.push((-2.0 * (null_loglik - shift.fit.loglik)).max(0.0));
    }
    Ok(out)
}

/// Resamples from the null ML fit and collects `T^(b)` for each target trial.
fn bootstrap_lrt_targets(
    model: &Model,
    contrasts: &[ContrastData],
    targets: &[usize],
    rule: TemporaryReference,
    config: &BootstrapConfig,
) -> Result<BTreeMap<u32, LrtBootstrap>> {
    let null_fit = model.fit(contrasts, Method::Ml).context(|| "null ML fit")?;
    let observed = lrt_statistics(model, contrasts, targets, rule)?;
    let (reps, failures) = run_replicates(config, |b| {
        let mut rng = replicate_rng(config.seed, DOMAIN_LRT, b as u64);
        let sample = resample_dataset(contrasts, &null_fit, &mut rng)?;
        lrt_statistics(model, &sample, targets, rule).context(|| format!("replicate {b}"))
    })?;
    Ok(targets
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let trial_id = contrasts[i].trial_id;
            let samples: Vec<f64> = reps.iter().map(|r| r[k]).collect();
            let p_value = bootstrap_p_value(&samples, observed[k]);
            let distribution = BootstrapDistribution::new(
                StatisticId::Lrt { trial_id },
                samples,
                failures,
                0,
                &config.percentiles,
            );
            (
                trial_id,
                LrtBootstrap {
                    observed: observed[k],
                    distribution,
                    p_value,
                },
            )
        })
        .collect())
}

pub fn bootstrap_lrt(
    model: &Model,
    contrasts: &[ContrastData],
    trial_id: u32,
    rule: TemporaryReference,
    config: &BootstrapConfig,
) -> Result<LrtBootstrap> {
    let idx = contrasts
        .iter()
        .position(|c| c.trial_id == trial_id)
        .ok_or(Error::UnknownTrial(trial_id))?;
    let mut out = bootstrap_lrt_targets(model, contrasts, &[idx], rule, config)?;
    Ok(out.remove(&trial_id).expect("target trial present"))
}

/// [`bootstrap_lrt`] for every trial, sharing the resampled datasets.
pub fn bootstrap_lrt_all(
    model: &Model,
    contrasts: &[ContrastData],
    rule: TemporaryReference,
    config: &BootstrapConfig,
) -> Result<BTreeMap<u32, LrtBootstrap>> {
    let targets: Vec<usize> = (0..contrasts.len()).collect();
    bootstrap_lrt_targets(model, contrasts, &targets, rule, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    #[test]
    fn percentile_rank_formula() {
        let samples: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_relative_eq!(percentile(&samples, 0.95).unwrap(), 95.05, epsilon = 1e-12);
        assert_eq!(percentile(&samples, 0.0).unwrap(), 1.0);
        assert_eq!(percentile(&samples, 1.0).unwrap(), 100.0);
        assert_eq!(percentile(&[3.5; 7], 0.3).unwrap(), 3.5);
        assert!(matches!(percentile(&[], 0.5), Err(Error::EmptySamples)));
        assert!(percentile(&[1.0], 1.5).is_err());
    }

    #[test]
    fn p_value_convention() {
        assert_eq!(bootstrap_p_value(&[1.0, 2.0, 3.0], 0.0), 1.0);
        assert_eq!(bootstrap_p_value(&[1.0, 2.0, 3.0], 2.5), 0.5);
        assert_eq!(bootstrap_p_value(&[1.0, 2.0, 3.0], 10.0), 0.25);
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| replicate_rng(7, 1, 3).gen()).collect();
        let b: Vec<u64> = (0..4).map(|_| replicate_rng(7, 1, 3).gen()).collect();
        assert_eq!(a, b);
        let x: u64 = replicate_rng(7, 1, 3).gen();
        assert_ne!(x, replicate_rng(7, 1, 4).gen::<u64>());
        assert_ne!(x, replicate_rng(7, 2, 3).gen::<u64>());
        assert_ne!(x, replicate_rng(8, 1, 3).gen::<u64>());
    }

    #[test]
    fn config_validation() {
        let mut c = BootstrapConfig::default();
        assert!(c.validate().is_ok());
        c.replicates = 0;
        assert!(c.validate().is_err());
        c.replicates = 1;
        c.percentiles = vec![0.9, 0.1];
        assert!(c.validate().is_err());
    }

    #[test]
    fn distribution_of_constant_statistic() {
        let d = BootstrapDistribution::new(
            StatisticId::CovRatio { trial_id: 1 },
            vec![0.7; 20],
            0,
            0,
            &[0.025, 0.05, 0.975],
        );
        assert!(d.percentiles.iter().all(|&(_, v)| v == 0.7));
    }

    #[test]
    fn independent_components_without_heterogeneity() {
        let c = ContrastData {
            trial_id: 1,
            arms: vec![TreatmentId(1), TreatmentId(2), TreatmentId(0)],
            reference: TreatmentId(0),
            augmented: false,
            treatments: vec![TreatmentId(1), TreatmentId(2)],
            y: DVector::zeros(2),
            s: DMatrix::from_diagonal(&DVector::from_vec(vec![0.04, 0.09])),
        };
        let other = c.clone();
        let model = Model::new(2);
        let mut fit = model.fit(&[c.clone(), ContrastData { trial_id: 2, ..other }], Method::Ml).unwrap();
        fit.tau2 = 0.0;
        let n = 20_000;
        let mut rng = replicate_rng(11, 9, 0);
        let (mut s11, mut s22, mut s12) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let y = &resample_dataset(std::slice::from_ref(&c), &fit, &mut rng).unwrap()[0].y;
            s11 += y[0] * y[0];
            s22 += y[1] * y[1];
            s12 += y[0] * y[1];
        }
        let n = n as f64;
        assert!((s11 / n - 0.04).abs() < 4.0 * 0.04 * (2.0 / n).sqrt());
        assert!((s22 / n - 0.09).abs() < 4.0 * 0.09 * (2.0 / n).sqrt());
        assert!((s12 / n).abs() < 4.0 * 0.06 / n.sqrt());
    }
}
