//! Contrast-based multivariate random-effects model
//!
//! ```text
//! y_i ~ N(X_i mu, tau2 * P + S_i)
//! ```
//!
//! on each trial's observed components, where `P` has unit diagonal and 0.5
//! off-diagonal correlations. `X_i` maps the basic parameters (effects of
//! treatments `1..=p` against the global reference) onto the trial's
//! contrasts, which lets head-to-head coded trials share the same likelihood.
//!
//! With a single heterogeneity parameter the mean can be profiled out in
//! closed form (generalized least squares), so both ML and REML reduce to a
//! bounded one-dimensional search over `tau2`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::{ContrastData, TreatmentId};
use crate::linalg::{self, half_correlation};
use crate::optimize::BoundedSearch;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    #[serde(rename = "REML")]
    Reml,
    #[serde(rename = "ML")]
    Ml,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Reml => "REML",
            Method::Ml => "ML",
        })
    }
}

/// Between-trial covariance `Psi = tau2 * P` with equal variances and
/// correlation 0.5.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeterogeneityStructure {
    pub tau2: f64,
    pub dimension: usize,
}

impl HeterogeneityStructure {
    pub const CORRELATION: f64 = 0.5;

    pub fn new(tau2: f64, dimension: usize) -> Self {
        Self { tau2, dimension }
    }

    pub fn psi(&self) -> DMatrix<f64> {
        self.block(self.dimension)
    }

    /// Covariance of `q` contrasts against a common arm. The consistency
    /// structure makes this the same for any choice of that arm.
    pub fn block(&self, q: usize) -> DMatrix<f64> {
        half_correlation(q) * self.tau2
    }

    /// `log det Psi = p log tau2 + log det P`, `-inf` at `tau2 = 0`.
    pub fn log_det(&self) -> f64 {
        let p = self.dimension as f64;
        // det P = (1/2)^(p-1) (p+1)/2 = (p + 1) / 2^p
        p * self.tau2.ln() + (p + 1.0).ln() - p * std::f64::consts::LN_2
    }
}

/// Estimable basic parameters: the non-reference treatments that occur in
/// the data, ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamIndex {
    treatments: Vec<TreatmentId>,
}

impl ParamIndex {
    pub fn from_data(contrasts: &[ContrastData]) -> Self {
        let mut ts: Vec<TreatmentId> = contrasts
            .iter()
            .flat_map(|c| c.treatments.iter().copied().chain(std::iter::once(c.reference)))
            .filter(|t| !t.is_reference())
            .collect();
        ts.sort();
        ts.dedup();
        Self { treatments: ts }
    }

    pub fn len(&self) -> usize {
        self.treatments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.treatments.is_empty()
    }

    pub fn treatments(&self) -> &[TreatmentId] {
        &self.treatments
    }

    pub fn column(&self, t: TreatmentId) -> Option<usize> {
        self.treatments.binary_search(&t).ok()
    }

    /// Rows `e_t - e_ref` for each listed treatment; `None` when one of them
    /// is not estimable.
    pub fn design(&self, treatments: &[TreatmentId], reference: TreatmentId) -> Option<DMatrix<f64>> {
        let mut x = DMatrix::zeros(treatments.len(), self.len());
        let ref_col = if reference.is_reference() {
            None
        } else {
            Some(self.column(reference)?)
        };
        for (row, t) in treatments.iter().enumerate() {
            if !t.is_reference() {
                x[(row, self.column(*t)?)] += 1.0;
            }
            if let Some(c) = ref_col {
                x[(row, c)] -= 1.0;
            }
        }
        Some(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFit {
    pub method: Method,
    /// Number of non-reference treatments in the network.
    pub p: usize,
    pub tau2: f64,
    pub params: ParamIndex,
    /// Estimated effects of `params` against the global reference.
    pub mu: DVector<f64>,
    /// `(sum_i X_i^T W_i X_i)^{-1}`.
    pub mu_cov: DMatrix<f64>,
    /// Maximized objective: `l` for ML, `l_RL` (constant dropped) for REML.
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub at_upper_bound: bool,
}

impl ModelFit {
    pub fn heterogeneity(&self) -> HeterogeneityStructure {
        HeterogeneityStructure::new(self.tau2, self.p)
    }

    pub fn tau(&self) -> f64 {
        self.tau2.sqrt()
    }

    /// True when every non-reference treatment of the network is estimable.
    pub fn is_complete(&self) -> bool {
        self.params.len() == self.p
    }

    /// Effect of `t` against the global reference.
    pub fn effect(&self, t: TreatmentId) -> Option<f64> {
        if t.is_reference() {
            return Some(0.0);
        }
        self.params.column(t).map(|c| self.mu[c])
    }

    /// Estimate and variance of `theta_a - theta_b`.
    pub fn contrast(&self, a: TreatmentId, b: TreatmentId) -> Option<(f64, f64)> {
        let x = self.params.design(&[a], b)?;
        let est = (&x * &self.mu)[0];
        let var = (&x * &self.mu_cov * x.transpose())[(0, 0)];
        Some((est, var))
    }

    /// `X mu` and `X V[mu] X^T` for contrasts of `treatments` against `reference`.
    pub fn project(
        &self,
        treatments: &[TreatmentId],
        reference: TreatmentId,
    ) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let x = self.params.design(treatments, reference)?;
        Some((&x * &self.mu, &x * &self.mu_cov * x.transpose()))
    }

    /// Length-`p` effect vector; non-estimable entries are zero.
    pub fn full_mu(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.p,
            (1..=self.p).map(|t| self.effect(TreatmentId(t)).unwrap_or(0.0)),
        )
    }
}

/// Mean-shift fit for one trial: that trial gets its own location offset
/// `eta` on its observed components.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanShiftFit {
    pub fit: ModelFit,
    pub shifted_trial: u32,
    /// Offsets on the shifted trial's components, in its own coding.
    pub eta: Vec<(TreatmentId, Option<f64>)>,
}

/// GLS profile of the mean at fixed `tau2`.
#[derive(Debug, Clone)]
pub struct Profile {
    pub params: ParamIndex,
    pub mu: DVector<f64>,
    pub info: DMatrix<f64>,
    /// `l(mu_hat(tau2), tau2)`.
    pub loglik: f64,
    pub log_det_info: f64,
}

impl Profile {
    pub fn restricted_loglik(&self) -> f64 {
        self.loglik - 0.5 * self.log_det_info
    }

    pub fn mu_cov(&self) -> Result<DMatrix<f64>> {
        linalg::spd_inverse(&self.info, "information matrix")
    }
}

/// Model context: network size and optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Model {
    pub p: usize,
    pub search: BoundedSearch,
}

impl Model {
    pub fn new(p: usize) -> Self {
        Self {
            p,
            search: BoundedSearch::default(),
        }
    }

    pub fn with_search(mut self, search: BoundedSearch) -> Self {
        self.search = search;
        self
    }

    /// `W_i = (Psi + S_i)^{-1}` on the observed components.
    pub fn marginal_precision(&self, contrast: &ContrastData, tau2: f64) -> Result<DMatrix<f64>> {
        check_tau2(tau2)?;
        linalg::spd_inverse(&marginal_cov(contrast, tau2), "marginal covariance")
    }

    pub fn profile_mu(&self, contrasts: &[ContrastData], tau2: f64) -> Result<Profile> {
        check_tau2(tau2)?;
        profile(contrasts, tau2, &ParamIndex::from_data(contrasts))
    }

    /// `l(mu, Psi)`; `mu` is the length-`p` vector of effects against the
    /// global reference.
    pub fn log_likelihood(
        &self,
        contrasts: &[ContrastData],
        mu: &DVector<f64>,
        tau2: f64,
    ) -> Result<f64> {
        check_tau2(tau2)?;
        if mu.len() != self.p {
            return Err(Error::Config(format!("mu has length {}, expected {}", mu.len(), self.p)));
        }
        let all = ParamIndex {
            treatments: (1..=self.p).map(TreatmentId).collect(),
        };
        let mut total = 0.0;
        for c in contrasts {
            let x = all
                .design(&c.treatments, c.reference)
                .ok_or_else(|| Error::Config(format!("trial {} outside the network", c.trial_id)))?;
            let factor = linalg::cholesky(&marginal_cov(c, tau2), "marginal covariance")?;
            let r = &c.y - x * mu;
            let quad = r.dot(&factor.solve(&r));
            total += linalg::log_det(&factor) + quad + c.observed_count() as f64 * LN_2PI;
        }
        Ok(-0.5 * total)
    }

    /// `l_RL(tau2) = l(mu_hat(tau2), tau2) - 1/2 log det(sum X^T W X)`; the
    /// additive constant is taken as zero.
    pub fn restricted_log_likelihood(&self, contrasts: &[ContrastData], tau2: f64) -> Result<f64> {
        Ok(self.profile_mu(contrasts, tau2)?.restricted_loglik())
    }

    pub fn fit(&self, contrasts: &[ContrastData], method: Method) -> Result<ModelFit> {
        if contrasts.len() < 2 {
            return Err(Error::Config("model fitting needs at least two trials".into()));
        }
        let params = ParamIndex::from_data(contrasts);
        let objective = |tau2: f64| -> Result<f64> {
            let prof = profile(contrasts, tau2, &params)?;
            Ok(match method {
                Method::Reml => prof.restricted_loglik(),
                Method::Ml => prof.loglik,
            })
        };
        let best = self.search.maximize(objective)?;
        let reml = method == Method::Reml;
        let tau2 = polish(best.x, self.search.upper, |t| {
            profile_score(contrasts, t, &params, reml)
        })?;
        let prof = profile(contrasts, tau2, &params)?;
        Ok(ModelFit {
            method,
            p: self.p,
            tau2,
            mu_cov: prof.mu_cov()?,
            loglik: if reml { prof.restricted_loglik() } else { prof.loglik },
            mu: prof.mu,
            params,
            converged: best.converged,
            iterations: best.iterations,
            at_upper_bound: tau2 >= self.search.upper * (1.0 - 1e-6),
        })
    }

    /// ML fit of the mean-shift model for trial `shifted`.
    ///
    /// With `eta` free, the shifted trial's residual is zero at the optimum,
    /// so the profile likelihood is the other trials' likelihood plus the
    /// shifted trial's log-determinant and normalizing terms. The trial is
    /// used in whatever coding it has in `contrasts`.
    pub fn fit_mean_shift(&self, contrasts: &[ContrastData], shifted: u32) -> Result<MeanShiftFit> {
        let idx = contrasts
            .iter()
            .position(|c| c.trial_id == shifted)
            .ok_or(Error::UnknownTrial(shifted))?;
        if contrasts.len() < 2 {
            return Err(Error::Config("model fitting needs at least two trials".into()));
        }
        let target = &contrasts[idx];
        let others: Vec<ContrastData> = contrasts
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != idx)
            .map(|(_, c)| c.clone())
            .collect();
        let params = ParamIndex::from_data(&others);
        let shifted_terms = |tau2: f64| -> Result<f64> {
            let ld = linalg::spd_log_det(&marginal_cov(target, tau2), "marginal covariance")?;
            Ok(-0.5 * (ld + target.observed_count() as f64 * LN_2PI))
        };
        let objective = |tau2: f64| -> Result<f64> {
            Ok(profile(&others, tau2, &params)?.loglik + shifted_terms(tau2)?)
        };
        let best = self.search.maximize(objective)?;
        let tau2 = polish(best.x, self.search.upper, |t| {
            let w = linalg::spd_inverse(&marginal_cov(target, t), "marginal covariance")?;
            let p = linalg::half_correlation(target.observed_count());
            Ok(profile_score(&others, t, &params, false)? - 0.5 * (w * p).trace())
        })?;
        let prof = profile(&others, tau2, &params)?;
        let fit = ModelFit {
            method: Method::Ml,
            p: self.p,
            tau2,
            mu_cov: prof.mu_cov()?,
            loglik: prof.loglik + shifted_terms(tau2)?,
            mu: prof.mu,
            params,
            converged: best.converged,
            iterations: best.iterations,
            at_upper_bound: tau2 >= self.search.upper * (1.0 - 1e-6),
        };
        let eta = target
            .treatments
            .iter()
            .enumerate()
            .map(|(k, &t)| {
                let fitted = fit.contrast(t, target.reference).map(|(e, _)| e);
                (t, fitted.map(|f| target.y[k] - f))
            })
            .collect();
        Ok(MeanShiftFit {
            fit,
            shifted_trial: shifted,
            eta,
        })
    }
}

fn check_tau2(tau2: f64) -> Result<()> {
    if tau2 >= 0.0 && tau2.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("tau2 must be finite and nonnegative, got {tau2}")))
    }
}

pub(crate) fn marginal_cov(c: &ContrastData, tau2: f64) -> DMatrix<f64> {
    let mut m = c.s.clone();
    let q = c.observed_count();
    for i in 0..q {
        for j in 0..q {
            m[(i, j)] += if i == j { tau2 } else { 0.5 * tau2 };
        }
    }
    m
}

/// Derivative in `tau2` of the profile log-likelihood (`reml = false`) or of
/// the restricted log-likelihood.
fn profile_score(
    contrasts: &[ContrastData],
    tau2: f64,
    params: &ParamIndex,
    reml: bool,
) -> Result<f64> {
    let prof = profile(contrasts, tau2, params)?;
    let k = params.len();
    let mut g = 0.0;
    let mut dinfo = DMatrix::zeros(k, k);
    for c in contrasts {
        let x = params.design(&c.treatments, c.reference).ok_or_else(|| {
            Error::NotComputable(format!("trial {} references a non-estimable treatment", c.trial_id))
        })?;
        let w = linalg::spd_inverse(&marginal_cov(c, tau2), "marginal covariance")?;
        let p = linalg::half_correlation(c.observed_count());
        let u = &w * (&c.y - &x * &prof.mu);
        g += -0.5 * (&w * &p).trace() + 0.5 * u.dot(&(&p * &u));
        if reml && k > 0 {
            let wx = &w * &x;
            dinfo += wx.transpose() * &p * &wx;
        }
    }
    if reml && k > 0 {
        g += 0.5 * (prof.mu_cov()? * dinfo).trace();
    }
    Ok(g)
}

/// Refines an interior maximizer by locating the sign change of the score
/// near it. Leaves `x` unchanged when no bracket is found.
fn polish<F>(x: f64, upper: f64, mut score: F) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    if x <= 0.0 || x >= upper {
        return Ok(x);
    }
    let g = score(x)?;
    if g == 0.0 || !g.is_finite() {
        return Ok(x);
    }
    // Step away from x in the uphill direction until the score changes sign.
    let dir = g.signum();
    let mut h = (x * 1e-7).max(1e-14);
    let (mut a, mut ga) = (x, g);
    let (mut b, mut gb) = (x, g);
    for _ in 0..40 {
        let t = (x + dir * h).clamp(0.0, upper);
        let gt = score(t)?;
        if !gt.is_finite() {
            return Ok(x);
        }
        if gt.signum() != dir {
            if dir > 0.0 {
                (b, gb) = (t, gt);
            } else {
                (a, ga) = (t, gt);
            }
            break;
        }
        if dir > 0.0 {
            (a, ga) = (t, gt);
        } else {
            (b, gb) = (t, gt);
        }
        if t == 0.0 || t == upper {
            return Ok(x);
        }
        h *= 4.0;
    }
    if !(ga > 0.0 && gb < 0.0) {
        return Ok(x);
    }
    // Illinois variant of regula falsi.
    let mut side = 0i8;
    for _ in 0..100 {
        let m = (a * gb - b * ga) / (gb - ga);
        let m = if m > a && m < b { m } else { 0.5 * (a + b) };
        let gm = score(m)?;
        if gm == 0.0 || b - a <= POLISH_TOL * b {
            return Ok(m);
        }
        if gm > 0.0 {
            a = m;
            ga = gm;
            if side == 1 {
                gb *= 0.5;
            }
            side = 1;
        } else {
            b = m;
            gb = gm;
            if side == -1 {
                ga *= 0.5;
            }
            side = -1;
        }
    }
    Ok(0.5 * (a + b))
}

const POLISH_TOL: f64 = 1e-13;

fn profile(contrasts: &[ContrastData], tau2: f64, params: &ParamIndex) -> Result<Profile> {
    let k = params.len();
    let mut info = DMatrix::zeros(k, k);
    let mut score = DVector::zeros(k);
    let mut ywy = 0.0;
    let mut log_det = 0.0;
    let mut n_obs = 0usize;
    for c in contrasts {
        let x = params.design(&c.treatments, c.reference).ok_or_else(|| {
            Error::NotComputable(format!("trial {} references a non-estimable treatment", c.trial_id))
        })?;
        let factor = linalg::cholesky(&marginal_cov(c, tau2), "marginal covariance")?;
        let l = factor.l_dirty();
        let a = l
            .solve_lower_triangular(&x)
            .ok_or(Error::NotPositiveDefinite("marginal covariance"))?;
        let b = l
            .solve_lower_triangular(&c.y)
            .ok_or(Error::NotPositiveDefinite("marginal covariance"))?;
        info += a.transpose() * &a;
        score += a.transpose() * &b;
        ywy += b.norm_squared();
        log_det += linalg::log_det(&factor);
        n_obs += c.observed_count();
    }
    let info = linalg::symmetrize(info);
    let (mu, log_det_info) = if k == 0 {
        (DVector::zeros(0), 0.0)
    } else {
        let factor = linalg::cholesky(&info, "information matrix")
            .map_err(|_| Error::NotComputable("information matrix is singular".into()))?;
        (factor.solve(&score), linalg::log_det(&factor))
    };
    let quad = (ywy - score.dot(&mu)).max(0.0);
    Ok(Profile {
        params: params.clone(),
        mu,
        info,
        loglik: -0.5 * (log_det + quad + n_obs as f64 * LN_2PI),
        log_det_info,
    })
}
