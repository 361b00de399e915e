//! Regression fitters for the plug-in conditional means.
//!
//! All fitters take a covariate matrix `Z` (n × d, no intercept column) and
//! prepend an unpenalized intercept. Coefficient vectors therefore have length
//! `d + 1` with the intercept at position 0.

mod krr;
mod lasso;
mod negbin;

pub use krr::{fit_krr, krr_lambda_objective, Kernel, KrrFit};
pub use lasso::{cv_lasso, lambda_max, lasso_path, CvConfig, CvLasso, CvRule};
pub use negbin::{estimate_size_mom, fit_negbin, nb_profile_loglik, SizeSpec, SIZE_MAX, SIZE_MIN};

use crate::error::{check_len, Error, Result};
use crate::nef::{expit, softplus};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Linear predictors beyond this magnitude mean the MLE is at infinity.
const DIVERGENCE_ETA: f64 = 20.0;
/// Ridge strength used when a logistic fit separates.
pub const SEPARATION_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GlmFamily {
    Logistic,
    Poisson,
    NegBin { size: f64 },
}

impl GlmFamily {
    #[inline]
    pub fn inv_link(self, eta: f64) -> f64 {
        match self {
            GlmFamily::Logistic => expit(eta),
            GlmFamily::Poisson | GlmFamily::NegBin { .. } => eta.exp(),
        }
    }

    #[inline]
    fn dmu_deta(self, mu: f64) -> f64 {
        match self {
            GlmFamily::Logistic => mu * (1.0 - mu),
            GlmFamily::Poisson | GlmFamily::NegBin { .. } => mu,
        }
    }

    /// IRLS weight `(dμ/dη)² / V(μ)`.
    #[inline]
    fn weight(self, mu: f64) -> f64 {
        match self {
            GlmFamily::Logistic => mu * (1.0 - mu),
            GlmFamily::Poisson => mu,
            GlmFamily::NegBin { size } => mu / (1.0 + mu / size),
        }
    }

    /// Factor turning `x (y − μ)` into the score contribution `x (y − μ) (dμ/dη) / V(μ)`.
    #[inline]
    pub(crate) fn score_factor(self, mu: f64) -> f64 {
        match self {
            GlmFamily::Logistic | GlmFamily::Poisson => 1.0,
            GlmFamily::NegBin { size } => 1.0 / (1.0 + mu / size),
        }
    }

    /// Deviance contribution of one observation.
    #[inline]
    pub(crate) fn unit_deviance(self, y: f64, eta: f64, mu: f64) -> f64 {
        match self {
            GlmFamily::Logistic => 2.0 * (softplus(eta) - y * eta),
            GlmFamily::Poisson => {
                let ylogy = if y > 0.0 { y * (y / mu).ln() } else { 0.0 };
                2.0 * (ylogy - (y - mu))
            }
            GlmFamily::NegBin { size } => {
                let ylogy = if y > 0.0 { y * (y / mu).ln() } else { 0.0 };
                2.0 * (ylogy - (y + size) * ((y + size) / (mu + size)).ln())
            }
        }
    }

    fn validate_response(self, y: &DVector<f64>) -> Result<()> {
        for &v in y.iter() {
            let ok = match self {
                GlmFamily::Logistic => v == 0.0 || v == 1.0,
                _ => v >= 0.0 && v.is_finite(),
            };
            if !ok {
                return Err(Error::Domain(format!(
                    "response value {v} is invalid for {self:?}"
                )));
            }
        }
        if let GlmFamily::NegBin { size } = self {
            if !(size > 0.0) || !size.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "negative binomial size must be positive, got {size}"
                )));
            }
        }
        Ok(())
    }

    fn initial_intercept(self, y: &DVector<f64>) -> f64 {
        let m = y.mean();
        match self {
            GlmFamily::Logistic => {
                let m = m.clamp(1e-8, 1.0 - 1e-8);
                (m / (1.0 - m)).ln()
            }
            _ => m.max(1e-10).ln(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", content = "lambda", rename_all = "snake_case")]
pub enum Penalty {
    #[default]
    None,
    /// Objective `deviance/2 + nλ Σ|β_j|` over non-intercept coefficients.
    L1(f64),
    /// Objective `deviance/2 + (nλ/2) Σ β_j²` over non-intercept coefficients.
    L2(f64),
}

impl Penalty {
    fn lambda(self) -> f64 {
        match self {
            Penalty::None => 0.0,
            Penalty::L1(l) | Penalty::L2(l) => l,
        }
    }

    /// Twice the penalty term, on the deviance scale.
    fn deviance_scale(self, n: usize, beta: &DVector<f64>) -> f64 {
        let n = n as f64;
        let tail = beta.rows(1, beta.len() - 1);
        match self {
            Penalty::None => 0.0,
            Penalty::L1(l) => 2.0 * n * l * tail.iter().map(|b| b.abs()).sum::<f64>(),
            Penalty::L2(l) => n * l * tail.norm_squared(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrlsControl {
    pub max_iter: usize,
    /// Relative change in penalized deviance, or maximum coefficient change.
    pub tol: f64,
    pub max_halvings: usize,
    /// Coordinate descent sweep tolerance (L1 only).
    pub cd_tol: f64,
    pub cd_max_sweeps: usize,
}

impl Default for IrlsControl {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-8,
            max_halvings: 30,
            cd_tol: 1e-7,
            cd_max_sweeps: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    /// Intercept first.
    pub coefficients: DVector<f64>,
    pub family: GlmFamily,
    pub penalty: Penalty,
    pub converged: bool,
    pub iterations: usize,
    /// Negative binomial size `r`.
    pub dispersion_size: Option<f64>,
    /// Set when a separated logistic fit was replaced by a ridge-stabilized one.
    pub separation_fallback: bool,
    pub fitted_means: DVector<f64>,
    pub deviance: f64,
    /// Penalized deviance after each iteration, starting with the initial value.
    pub objective_history: Vec<f64>,
}

impl GlmFit {
    /// Linear predictor `β_0 + Z β`.
    pub fn predict_natural(&self, z: &DMatrix<f64>) -> Result<DVector<f64>> {
        check_len(self.coefficients.len() - 1, z.ncols())?;
        Ok(linear_predictor(z, &self.coefficients))
    }

    pub fn predict_mean(&self, z: &DMatrix<f64>) -> Result<DVector<f64>> {
        Ok(self.predict_natural(z)?.map(|e| self.family.inv_link(e)))
    }

    pub fn intercept(&self) -> f64 {
        self.coefficients[0]
    }
}

/// Anything that maps covariates to conditional means.
pub trait MeanModel {
    fn predict_mean(&self, z: &DMatrix<f64>) -> Result<DVector<f64>>;
}

impl MeanModel for GlmFit {
    fn predict_mean(&self, z: &DMatrix<f64>) -> Result<DVector<f64>> {
        GlmFit::predict_mean(self, z)
    }
}

impl MeanModel for KrrFit {
    fn predict_mean(&self, z: &DMatrix<f64>) -> Result<DVector<f64>> {
        KrrFit::predict_mean(self, z)
    }
}

pub(crate) fn linear_predictor(z: &DMatrix<f64>, beta: &DVector<f64>) -> DVector<f64> {
    let mut eta = z * beta.rows(1, beta.len() - 1);
    eta.add_scalar_mut(beta[0]);
    eta
}

pub(crate) fn check_inputs(z: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
    check_len(z.nrows(), y.len())?;
    if y.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 observations, got {}",
            y.len()
        )));
    }
    if z.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Domain(
            "non-finite value in regression inputs".into(),
        ));
    }
    Ok(())
}

pub(crate) fn deviance(
    family: GlmFamily,
    y: &DVector<f64>,
    eta: &DVector<f64>,
    mu: &DVector<f64>,
) -> f64 {
    y.iter()
        .zip(eta.iter())
        .zip(mu.iter())
        .map(|((&y, &e), &m)| family.unit_deviance(y, e, m))
        .sum()
}

pub(crate) fn diverged(family: GlmFamily, eta: &DVector<f64>) -> bool {
    match family {
        GlmFamily::Logistic => eta.amax() > DIVERGENCE_ETA,
        _ => eta.min() < -DIVERGENCE_ETA,
    }
}

/// Result of the dense (unpenalized or ridge) IRLS loop.
pub(crate) struct IrlsState {
    pub beta: DVector<f64>,
    pub eta: DVector<f64>,
    pub mu: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub history: Vec<f64>,
    pub deviance: f64,
    pub singular: bool,
}

/// Newton-Raphson / IRLS with step halving on the penalized deviance.
pub(crate) fn irls_dense(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    family: GlmFamily,
    ridge: f64,
    control: &IrlsControl,
    start: Option<&DVector<f64>>,
) -> IrlsState {
    let n = y.len();
    let p = z.ncols() + 1;
    let mut beta = match start {
        Some(b) => b.clone(),
        None => {
            let mut b = DVector::zeros(p);
            b[0] = family.initial_intercept(y);
            b
        }
    };
    let penalty = if ridge > 0.0 {
        Penalty::L2(ridge)
    } else {
        Penalty::None
    };
    let objective = |beta: &DVector<f64>| {
        let eta = linear_predictor(z, beta);
        let mu = eta.map(|e| family.inv_link(e));
        let dev = deviance(family, y, &eta, &mu);
        (dev + penalty.deviance_scale(n, beta), dev, eta, mu)
    };
    let (mut obj, mut dev, mut eta, mut mu) = objective(&beta);
    let mut history = vec![obj];
    let mut converged = false;
    let mut singular = false;
    let mut iterations = 0;

    // design with intercept, reused across iterations
    let mut x = DMatrix::zeros(n, p);
    x.column_mut(0).fill(1.0);
    x.columns_mut(1, p - 1).copy_from(z);

    while iterations < control.max_iter {
        iterations += 1;
        let mut xw = x.clone();
        let mut wz = DVector::zeros(n);
        for i in 0..n {
            let w = family.weight(mu[i]).max(1e-300);
            let d = family.dmu_deta(mu[i]).max(1e-300);
            let zi = eta[i] + (y[i] - mu[i]) / d;
            let sw = w.sqrt();
            xw.row_mut(i).scale_mut(sw);
            wz[i] = sw * zi;
        }
        let mut xtwx = xw.tr_mul(&xw);
        for j in 1..p {
            xtwx[(j, j)] += n as f64 * ridge;
        }
        let rhs = xw.tr_mul(&wz);
        let Some(chol) = xtwx.cholesky() else {
            singular = true;
            break;
        };
        let target = chol.solve(&rhs);

        // step halving until the penalized deviance does not increase
        let mut cand = target;
        let mut accepted = None;
        for _ in 0..=control.max_halvings {
            let (o, d, e, m) = objective(&cand);
            if o.is_finite() && o <= obj + 1e-10 * obj.abs().max(1.0) {
                accepted = Some((o, d, e, m));
                break;
            }
            cand = (&cand + &beta) * 0.5;
        }
        let Some((o_new, d_new, e_new, m_new)) = accepted else {
            break;
        };
        let step = (&cand - &beta).amax();
        let rel = (obj - o_new).abs() / (o_new.abs() + 0.1);
        beta = cand;
        obj = o_new.min(obj);
        dev = d_new;
        eta = e_new;
        mu = m_new;
        history.push(obj);
        if rel <= control.tol || step <= control.tol {
            converged = true;
            break;
        }
    }
    IrlsState {
        beta,
        eta,
        mu,
        converged,
        iterations,
        history,
        deviance: dev,
        singular,
    }
}

fn finish_dense(
    state: IrlsState,
    family: GlmFamily,
    penalty: Penalty,
    separation_fallback: bool,
) -> GlmFit {
    let converged = state.converged && !state.singular && !diverged(family, &state.eta);
    GlmFit {
        coefficients: state.beta,
        family,
        penalty,
        converged: converged && !separation_fallback,
        iterations: state.iterations,
        dispersion_size: match family {
            GlmFamily::NegBin { size } => Some(size),
            _ => None,
        },
        separation_fallback,
        fitted_means: state.mu,
        deviance: state.deviance,
        objective_history: state.history,
    }
}

/// Fit a GLM of `y` on `[1, Z]`.
pub fn fit_glm(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    family: GlmFamily,
    penalty: Penalty,
    control: &IrlsControl,
) -> Result<GlmFit> {
    check_inputs(z, y)?;
    family.validate_response(y)?;
    let lambda = penalty.lambda();
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "penalty must be nonnegative, got {lambda}"
        )));
    }
    match penalty {
        Penalty::L1(l) => lasso::fit_l1(z, y, family, l, control, None),
        Penalty::L2(l) => Ok(finish_dense(
            irls_dense(z, y, family, l, control, None),
            family,
            penalty,
            false,
        )),
        Penalty::None => {
            let state = irls_dense(z, y, family, 0.0, control, None);
            let failed = !state.converged || state.singular || diverged(family, &state.eta);
            if family == GlmFamily::Logistic && failed {
                let ridge = irls_dense(z, y, family, SEPARATION_RIDGE, control, None);
                return Ok(finish_dense(
                    ridge,
                    family,
                    Penalty::L2(SEPARATION_RIDGE),
                    true,
                ));
            }
            Ok(finish_dense(state, family, penalty, false))
        }
    }
}

pub(crate) fn fit_glm_from(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    family: GlmFamily,
    control: &IrlsControl,
    start: &DVector<f64>,
) -> GlmFit {
    finish_dense(
        irls_dense(z, y, family, 0.0, control, Some(start)),
        family,
        Penalty::None,
        false,
    )
}

/// Logistic regression of a binary `x` on `Z`.
pub fn fit_logistic(z: &DMatrix<f64>, x: &DVector<f64>, penalty: Penalty) -> Result<GlmFit> {
    fit_glm(z, x, GlmFamily::Logistic, penalty, &IrlsControl::default())
}

/// Poisson log-linear regression of counts `y` on `Z`.
pub fn fit_poisson(z: &DMatrix<f64>, y: &DVector<f64>, penalty: Penalty) -> Result<GlmFit> {
    fit_glm(z, y, GlmFamily::Poisson, penalty, &IrlsControl::default())
}

/// Expected Fisher information `X'WX` at the fitted means, with `X = [1, Z]`.
pub fn fisher_information(fit: &GlmFit, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_len(fit.fitted_means.len(), z.nrows())?;
    check_len(fit.coefficients.len() - 1, z.ncols())?;
    let n = z.nrows();
    let p = z.ncols() + 1;
    let mut xw = DMatrix::zeros(n, p);
    for i in 0..n {
        let sw = fit.family.weight(fit.fitted_means[i]).sqrt();
        xw[(i, 0)] = sw;
        for j in 1..p {
            xw[(i, j)] = sw * z[(i, j - 1)];
        }
    }
    Ok(xw.tr_mul(&xw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn intercept_only(n: usize) -> DMatrix<f64> {
        DMatrix::zeros(n, 0)
    }

    #[test]
    fn logistic_intercept_only() {
        let x = DVector::from_iterator(8, [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let fit = fit_logistic(&intercept_only(8), &x, Penalty::None).unwrap();
        assert!(fit.converged);
        assert!((fit.intercept() - (0.25f64 / 0.75).ln()).abs() < 1e-10);
        let pred = fit.predict_mean(&intercept_only(3)).unwrap();
        assert!(pred.iter().all(|&p| (p - 0.25).abs() < 1e-10));
    }

    #[test]
    fn poisson_intercept_only_and_all_zero() {
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let fit = fit_poisson(&intercept_only(5), &y, Penalty::None).unwrap();
        assert!(fit.converged);
        assert!((fit.intercept() - 3f64.ln()).abs() < 1e-10);
        let zeros = DVector::zeros(6);
        let fit = fit_poisson(&intercept_only(6), &zeros, Penalty::None).unwrap();
        assert!(!fit.converged);
    }

    #[test]
    fn separation_is_flagged_with_finite_ridge_fit() {
        let z = DMatrix::from_column_slice(6, 1, &[-3.0, -2.0, -1.0, 1.0, 2.0, 3.0]);
        let x = DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let fit = fit_logistic(&z, &x, Penalty::None).unwrap();
        assert!(!fit.converged);
        assert!(fit.separation_fallback);
        assert!(fit.coefficients.iter().all(|b| b.is_finite()));
        assert!(fit.fitted_means.iter().all(|&m| m > 0.0 && m < 1.0));
    }

    #[test]
    fn input_errors() {
        let z = DMatrix::zeros(3, 1);
        let y = DVector::from_vec(vec![0.0, 1.0]);
        assert!(matches!(
            fit_logistic(&z, &y, Penalty::None),
            Err(Error::DimensionMismatch { .. })
        ));
        let y = DVector::from_vec(vec![0.0, 0.5, 1.0]);
        assert!(matches!(
            fit_logistic(&z, &y, Penalty::None),
            Err(Error::Domain(_))
        ));
        let y = DVector::from_vec(vec![0.0, 1.0, 1.0]);
        let fit = fit_logistic(&z, &y, Penalty::None).unwrap();
        assert!(matches!(
            fit.predict_natural(&DMatrix::zeros(2, 2)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    fn synthetic(
        seed: u64,
        n: usize,
        beta: &[f64],
        family: GlmFamily,
    ) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = beta.len() - 1;
        let z = DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng));
        let eta = linear_predictor(&z, &DVector::from_column_slice(beta));
        let y = eta.map(|e| match family {
            GlmFamily::Logistic => crate::nef::NefFamily::Bernoulli.sample(e, &mut rng),
            _ => crate::nef::NefFamily::Poisson.sample(e, &mut rng),
        });
        let _: f64 = rng.random();
        (z, y)
    }

    fn mahalanobis_sq(fit: &GlmFit, z: &DMatrix<f64>, truth: &[f64]) -> f64 {
        let info = fisher_information(fit, z).unwrap();
        let diff = &fit.coefficients - DVector::from_column_slice(truth);
        (diff.transpose() * info * &diff)[0]
    }

    #[test]
    fn logistic_recovers_coefficients() {
        let truth = [-1.0, 0.5, -0.5];
        let (z, x) = synthetic(7, 500, &truth, GlmFamily::Logistic);
        let fit = fit_logistic(&z, &x, Penalty::None).unwrap();
        assert!(fit.converged);
        // χ²_3 quantile at 0.9973
        assert!(mahalanobis_sq(&fit, &z, &truth) < 14.16);
    }

    #[test]
    fn poisson_recovers_coefficients() {
        let truth = [0.5, 0.3, -0.2];
        let (z, y) = synthetic(8, 2000, &truth, GlmFamily::Poisson);
        let fit = fit_poisson(&z, &y, Penalty::None).unwrap();
        assert!(fit.converged);
        assert!(mahalanobis_sq(&fit, &z, &truth) < 14.16);
    }

    #[test]
    fn monotone_history_and_prediction_consistency() {
        for (seed, family) in [(1, GlmFamily::Logistic), (2, GlmFamily::Poisson)] {
            let (z, y) = synthetic(seed, 300, &[0.2, 1.5, -2.0], family);
            for penalty in [Penalty::None, Penalty::L2(0.01), Penalty::L1(0.01)] {
                let fit = fit_glm(&z, &y, family, penalty, &IrlsControl::default()).unwrap();
                for w in fit.objective_history.windows(2) {
                    assert!(
                        w[1] <= w[0] + 1e-10 * w[0].abs().max(1.0),
                        "{family:?} {penalty:?}"
                    );
                }
                let pred = fit.predict_mean(&z).unwrap();
                assert!((pred - &fit.fitted_means).amax() <= 1e-10);
                let nat = fit.predict_natural(&z).unwrap();
                let via = nat.map(|e| family.inv_link(e));
                assert!((via - &fit.fitted_means).amax() <= 1e-15);
            }
        }
    }
}
