//! Leave-one-trial-out influence measures and the mean-shift outlier test.
//!
//! Residuals are reported on head-to-head contrasts: a trial without the
//! global reference is re-coded against one of its own arms so the
//! pseudo-arm from augmentation never enters a residual.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Context, Error, Result};
use crate::ingest::{ContrastData, TreatmentId};
use crate::linalg;
use crate::model::{marginal_cov, MeanShiftFit, Method, Model, ModelFit};

/// Which arm a trial is re-coded against for its residuals and its
/// mean-shift test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum TemporaryReference {
    /// Arm with the lowest canonical treatment index.
    #[default]
    LowestIndex,
    /// First arm listed in the input.
    FirstListed,
}

impl TemporaryReference {
    pub fn choose(self, c: &ContrastData) -> TreatmentId {
        match self {
            TemporaryReference::LowestIndex => *c.arms.iter().min().expect("trial has arms"),
            TemporaryReference::FirstListed => c.arms[0],
        }
    }

    /// The trial's contrasts against the chosen arm.
    pub fn head_to_head(self, c: &ContrastData) -> Result<ContrastData> {
        c.rebased(self.choose(c))
    }
}

/// Studentized residuals for one head-to-head comparison of one trial.
///
/// Values refer to the log odds ratio of `treatment` relative to
/// `reference`; reversing the comparison flips their sign.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualRecord {
    pub trial_id: u32,
    pub treatment: TreatmentId,
    pub reference: TreatmentId,
    /// Naive residual against the all-trial fit.
    pub phi: Option<f64>,
    /// Leave-one-trial-out residual.
    pub psi: Option<f64>,
    pub boot_lo: Option<f64>,
    pub boot_hi: Option<f64>,
    pub flagged: bool,
}

impl ResidualRecord {
    pub fn comparison(&self) -> (TreatmentId, TreatmentId) {
        (self.treatment, self.reference)
    }

    /// `psi` for the log odds ratio of `a` relative to `b`.
    pub fn psi_oriented(&self, a: TreatmentId, b: TreatmentId) -> Option<f64> {
        self.oriented(a, b, self.psi)
    }

    pub fn phi_oriented(&self, a: TreatmentId, b: TreatmentId) -> Option<f64> {
        self.oriented(a, b, self.phi)
    }

    fn oriented(&self, a: TreatmentId, b: TreatmentId, v: Option<f64>) -> Option<f64> {
        if (a, b) == (self.treatment, self.reference) {
            v
        } else if (b, a) == (self.treatment, self.reference) {
            v.map(|x| -x)
        } else {
            None
        }
    }
}

/// Determinant ratio of `Psi` estimates; `Psi` is singular at `tau2 = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum PsiRatio {
    Value(f64),
    /// The all-trial estimate of `tau2` is zero.
    ZeroHeterogeneity,
}

impl PsiRatio {
    pub fn value(self) -> Option<f64> {
        match self {
            PsiRatio::Value(v) => Some(v),
            PsiRatio::ZeroHeterogeneity => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialInfluenceRecord {
    pub trial_id: u32,
    pub covratio: Option<f64>,
    pub psiratio: Option<PsiRatio>,
    pub lrt: Option<f64>,
    /// Head-to-head contrasts in the trial (`q_i`).
    pub df: usize,
    pub chi2_p: Option<f64>,
    pub covratio_p5: Option<f64>,
    pub psiratio_p5: Option<f64>,
    pub lrt_p95: Option<f64>,
    pub lrt_boot_p: Option<f64>,
}

/// `R_i = V[y_i - X_i mu]^{-1/2} (y_i - X_i mu)` with
/// `V = (Psi + S_i) - X_i V[mu] X_i^T`.
pub fn multivariate_residual(contrast: &ContrastData, fit: &ModelFit) -> Result<DVector<f64>> {
    let (fitted, proj_cov) = fit
        .project(&contrast.treatments, contrast.reference)
        .ok_or_else(|| not_estimable(contrast.trial_id))?;
    let v = marginal_cov(contrast, fit.tau2) - proj_cov;
    let root = linalg::inverse_sqrt(&v, "residual covariance")?;
    Ok(root * (&contrast.y - fitted))
}

/// `phi_ij` for each component of `contrast`, using the all-trial fit.
/// A component is `None` when the trial alone determines its comparison, so
/// the residual variance vanishes.
pub fn naive_residuals(contrast: &ContrastData, fit: &ModelFit) -> Result<Vec<Option<f64>>> {
    let (fitted, proj_cov) = fit
        .project(&contrast.treatments, contrast.reference)
        .ok_or_else(|| not_estimable(contrast.trial_id))?;
    let m = marginal_cov(contrast, fit.tau2);
    let v = &m - proj_cov;
    (0..contrast.y.len())
        .map(|k| {
            let var = v[(k, k)];
            if var > LEVERAGE_TOL * m[(k, k)] {
                Ok(Some((contrast.y[k] - fitted[k]) / var.sqrt()))
            } else if var > -LEVERAGE_TOL * m[(k, k)] {
                Ok(None)
            } else {
                Err(Error::NotPositiveDefinite("residual variance"))
            }
        })
        .collect()
}

const LEVERAGE_TOL: f64 = 1e-4;

/// `psi_ij` for each component of `contrast`, using a fit that excludes the
/// trial. Components whose comparison the fit cannot estimate are `None`.
pub fn loo_residuals(contrast: &ContrastData, loo_fit: &ModelFit) -> Vec<Option<f64>> {
    let m = marginal_cov(contrast, loo_fit.tau2);
    contrast
        .treatments
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let (est, var) = loo_fit.contrast(t, contrast.reference)?;
            let v = m[(k, k)] + var;
            (v > 0.0).then(|| (contrast.y[k] - est) / v.sqrt())
        })
        .collect()
}

fn not_estimable(trial_id: u32) -> Error {
    Error::NotComputable(format!("trial {trial_id} compares a treatment the fit cannot estimate"))
}

/// `det V[mu^(-i)] / det V[mu]`.
pub fn covratio(fit: &ModelFit, loo_fit: &ModelFit) -> Result<f64> {
    if fit.params != loo_fit.params {
        return Err(Error::NotComputable(
            "leave-one-out fit estimates a different set of treatments".into(),
        ));
    }
    let full = linalg::spd_log_det(&fit.mu_cov, "covariance of mu")?;
    let loo = linalg::spd_log_det(&loo_fit.mu_cov, "covariance of mu")?;
    Ok((loo - full).exp())
}

/// `det Psi^(-i) / det Psi = (tau2^(-i) / tau2)^p` under the equal-variance
/// structure.
pub fn psiratio(fit: &ModelFit, loo_fit: &ModelFit) -> PsiRatio {
    if fit.tau2 <= 0.0 {
        return PsiRatio::ZeroHeterogeneity;
    }
    PsiRatio::Value((loo_fit.tau2 / fit.tau2).powi(fit.p as i32))
}

#[derive(Debug, Clone)]
pub struct LrtResult {
    pub trial_id: u32,
    pub statistic: f64,
    pub df: usize,
    pub chi2_p: f64,
    pub null_fit: ModelFit,
    pub shift: MeanShiftFit,
}

/// Upper-tail chi-square probability.
pub fn chi2_sf(x: f64, df: usize) -> f64 {
    ChiSquared::new(df as f64)
        .map(|d| d.sf(x.max(0.0)))
        .unwrap_or(f64::NAN)
}

/// Likelihood ratio test of the mean-shift model for `trial_id` against the
/// null model, both fitted by ML with the trial re-coded head-to-head.
pub fn lrt_mean_shift(
    model: &Model,
    contrasts: &[ContrastData],
    trial_id: u32,
    rule: TemporaryReference,
) -> Result<LrtResult> {
    let idx = contrasts
        .iter()
        .position(|c| c.trial_id == trial_id)
        .ok_or(Error::UnknownTrial(trial_id))?;
    let mut coded = contrasts.to_vec();
    coded[idx] = rule.head_to_head(&contrasts[idx])?;
    let df = coded[idx].observed_count();

    let null_fit = model
        .fit(&coded, Method::Ml)
        .context(|| format!("null ML fit for trial {trial_id}"))?;
    let shift = model
        .fit_mean_shift(&coded, trial_id)
        .context(|| format!("mean-shift ML fit for trial {trial_id}"))?;
    let statistic = (-2.0 * (null_fit.loglik - shift.fit.loglik)).max(0.0);
    Ok(LrtResult {
        trial_id,
        statistic,
        df,
        chi2_p: chi2_sf(statistic, df),
        null_fit,
        shift,
    })
}

/// True when the direct-comparison graph of `contrasts` is connected.
pub fn is_connected(contrasts: &[ContrastData]) -> bool {
    let mut nodes: Vec<TreatmentId> = contrasts.iter().flat_map(|c| c.arms.iter().copied()).collect();
    nodes.sort();
    nodes.dedup();
    if nodes.is_empty() {
        return true;
    }
    let idx = |t: TreatmentId| nodes.binary_search(&t).expect("node present");
    let mut parent: Vec<usize> = (0..nodes.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for c in contrasts {
        let first = idx(c.arms[0]);
        for &a in &c.arms[1..] {
            let (ra, rb) = (find(&mut parent, first), find(&mut parent, idx(a)));
            parent[ra] = rb;
        }
    }
    let root = find(&mut parent, 0);
    (0..nodes.len()).all(|i| find(&mut parent, i) == root)
}

/// Outcome of refitting without one trial.
#[derive(Debug, Clone)]
pub enum LooFit {
    Fit(ModelFit),
    /// Removing the trial disconnects the remaining network.
    Disconnected,
}

impl LooFit {
    pub fn fit(&self) -> Option<&ModelFit> {
        match self {
            LooFit::Fit(f) => Some(f),
            LooFit::Disconnected => None,
        }
    }
}

fn without(contrasts: &[ContrastData], idx: usize) -> Vec<ContrastData> {
    contrasts
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != idx)
        .map(|(_, c)| c.clone())
        .collect()
}

pub fn leave_one_out_fit(
    model: &Model,
    contrasts: &[ContrastData],
    idx: usize,
    method: Method,
) -> Result<LooFit> {
    let rest = without(contrasts, idx);
    if !is_connected(&rest) {
        return Ok(LooFit::Disconnected);
    }
    model
        .fit(&rest, method)
        .map(LooFit::Fit)
        .context(|| format!("leave-one-out fit without trial {}", contrasts[idx].trial_id))
}

/// One refit per trial, in input order.
pub fn leave_one_out_fits(
    model: &Model,
    contrasts: &[ContrastData],
    method: Method,
    parallel: bool,
) -> Result<Vec<LooFit>> {
    let run = |i: usize| leave_one_out_fit(model, contrasts, i, method);
    if parallel {
        (0..contrasts.len()).into_par_iter().map(run).collect()
    } else {
        (0..contrasts.len()).map(run).collect()
    }
}

/// Leave-one-out statistics of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct LooMeasures {
    pub trial_id: u32,
    /// Head-to-head comparisons `(treatment, reference)`.
    pub comparisons: Vec<(TreatmentId, TreatmentId)>,
    pub psi: Vec<Option<f64>>,
    pub covratio: Option<f64>,
    pub psiratio: Option<PsiRatio>,
}

/// `psi`, COVRATIO and PSIRATIO for every trial given the all-trial REML fit.
pub fn loo_measures(
    model: &Model,
    contrasts: &[ContrastData],
    fit: &ModelFit,
    rule: TemporaryReference,
    parallel: bool,
) -> Result<Vec<LooMeasures>> {
    let loo = leave_one_out_fits(model, contrasts, Method::Reml, parallel)?;
    contrasts
        .iter()
        .zip(&loo)
        .map(|(c, l)| measures_from(c, fit, l, rule))
        .collect()
}

fn measures_from(
    c: &ContrastData,
    fit: &ModelFit,
    loo: &LooFit,
    rule: TemporaryReference,
) -> Result<LooMeasures> {
    let coded = rule.head_to_head(c)?;
    let comparisons = coded.treatments.iter().map(|&t| (t, coded.reference)).collect();
    Ok(match loo.fit() {
        Some(l) => LooMeasures {
            trial_id: c.trial_id,
            comparisons,
            psi: loo_residuals(&coded, l),
            covratio: covratio(fit, l).ok(),
            psiratio: Some(psiratio(fit, l)),
        },
        None => LooMeasures {
            trial_id: c.trial_id,
            comparisons,
            psi: vec![None; coded.observed_count()],
            covratio: None,
            psiratio: None,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiagnosticsConfig {
    pub temporary_reference: TemporaryReference,
    pub parallel: bool,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            temporary_reference: TemporaryReference::LowestIndex,
            parallel: true,
        }
    }
}

/// All influence measures for a dataset, before bootstrap calibration.
#[derive(Debug, Clone)]
pub struct InfluenceAnalysis {
    pub reml_fit: ModelFit,
    pub ml_fit: ModelFit,
    pub loo: Vec<LooFit>,
    pub residuals: Vec<ResidualRecord>,
    pub trials: Vec<TrialInfluenceRecord>,
    pub lrt: Vec<LrtResult>,
}

impl InfluenceAnalysis {
    pub fn compute(
        model: &Model,
        contrasts: &[ContrastData],
        config: &DiagnosticsConfig,
    ) -> Result<Self> {
        let rule = config.temporary_reference;
        let reml_fit = model.fit(contrasts, Method::Reml).context(|| "all-trial REML fit")?;
        let ml_fit = model.fit(contrasts, Method::Ml).context(|| "all-trial ML fit")?;
        let loo = leave_one_out_fits(model, contrasts, Method::Reml, config.parallel)?;

        let lrt_one = |c: &ContrastData| lrt_mean_shift(model, contrasts, c.trial_id, rule);
        let lrt: Vec<LrtResult> = if config.parallel {
            contrasts.par_iter().map(lrt_one).collect::<Result<_>>()?
        } else {
            contrasts.iter().map(lrt_one).collect::<Result<_>>()?
        };

        let mut residuals = Vec::new();
        let mut trials = Vec::new();
        for ((c, l), t) in contrasts.iter().zip(&loo).zip(&lrt) {
            let coded = rule.head_to_head(c)?;
            let phi = naive_residuals(&coded, &reml_fit)
                .context(|| format!("naive residuals of trial {}", c.trial_id))?;
            let m = measures_from(c, &reml_fit, l, rule)?;
            for (k, &(treatment, reference)) in m.comparisons.iter().enumerate() {
                residuals.push(ResidualRecord {
                    trial_id: c.trial_id,
                    treatment,
                    reference,
                    phi: phi[k],
                    psi: m.psi[k],
                    boot_lo: None,
                    boot_hi: None,
                    flagged: m.psi[k].is_some_and(|v| v.abs() > 1.96),
                });
            }
            trials.push(TrialInfluenceRecord {
                trial_id: c.trial_id,
                covratio: m.covratio,
                psiratio: m.psiratio,
                lrt: Some(t.statistic),
                df: t.df,
                chi2_p: Some(t.chi2_p),
                covratio_p5: None,
                psiratio_p5: None,
                lrt_p95: None,
                lrt_boot_p: None,
            });
        }
        Ok(Self {
            reml_fit,
            ml_fit,
            loo,
            residuals,
            trials,
            lrt,
        })
    }
}
