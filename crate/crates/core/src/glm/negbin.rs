//! Negative binomial regression with fixed, moment or maximum-likelihood size.
//!
//! NB(μ, r) has variance `μ + μ²/r`; `r → ∞` is the Poisson limit.

use super::{check_inputs, fit_glm, fit_glm_from, GlmFamily, GlmFit, IrlsControl, Penalty};
use crate::error::{check_len, Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

pub const SIZE_MIN: f64 = 1e-4;
pub const SIZE_MAX: f64 = 1e4;
/// Counts up to this value use exact finite sums for gamma-function differences.
const EXACT_SUM_LIMIT: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "size", rename_all = "snake_case")]
pub enum SizeSpec {
    Fixed(f64),
    Mom,
    Ml,
}

/// Moment estimate of the size: `1/r̂ = Σ((y−μ̂)² − μ̂) / Σμ̂²`, clamped.
pub fn estimate_size_mom(y: &DVector<f64>, fitted_means: &DVector<f64>) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::Empty("response"));
    }
    check_len(y.len(), fitted_means.len())?;
    if fitted_means.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
        return Err(Error::Domain("fitted means must be positive".into()));
    }
    let num: f64 = y
        .iter()
        .zip(fitted_means.iter())
        .map(|(y, m)| (y - m).powi(2) - m)
        .sum();
    let den: f64 = fitted_means.iter().map(|m| m * m).sum();
    let inv = num / den;
    if !(inv > 0.0) {
        return Ok(SIZE_MAX);
    }
    Ok((1.0 / inv).clamp(SIZE_MIN, SIZE_MAX))
}

/// ψ'(x) for x > 0 by upward recurrence and the asymptotic series.
fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 20.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    acc + 1.0 / x
        + x2 / 2.0
        + x2 / x * (1.0 / 6.0 - x2 * (1.0 / 30.0 - x2 * (1.0 / 42.0 - x2 / 30.0)))
}

/// Profile log-likelihood of the size given fixed means, with derivatives in `u = log r`.
struct SizeProfile<'a> {
    y: &'a [f64],
    mu: &'a [f64],
    /// Frequency of each count up to the exact-sum limit.
    small: Vec<f64>,
    large: Vec<f64>,
}

impl<'a> SizeProfile<'a> {
    fn new(y: &'a [f64], mu: &'a [f64]) -> Self {
        let ymax = y
            .iter()
            .fold(0.0f64, |a, &b| a.max(b))
            .min(EXACT_SUM_LIMIT as f64) as usize;
        let mut small = vec![0.0; ymax + 1];
        let mut large = Vec::new();
        for &v in y {
            if v <= EXACT_SUM_LIMIT as f64 {
                small[v as usize] += 1.0;
            } else {
                large.push(v);
            }
        }
        Self {
            y,
            mu,
            small,
            large,
        }
    }

    /// (ℓ, dℓ/dr, d²ℓ/dr²) up to a constant free of r.
    fn eval(&self, r: f64) -> (f64, f64, f64) {
        // Σ_i [lnΓ(y_i + r) − lnΓ(r)] and its derivatives
        let (mut g0, mut g1, mut g2) = (0.0, 0.0, 0.0);
        // number of observations with count > k
        let mut above: f64 = self.small.iter().sum::<f64>() - self.small[0];
        for k in 0..self.small.len().saturating_sub(1) {
            let t = r + k as f64;
            g0 += above * t.ln();
            g1 += above / t;
            g2 -= above / (t * t);
            above -= self.small[k + 1];
        }
        for &v in &self.large {
            g0 += ln_gamma(v + r) - ln_gamma(r);
            g1 += digamma(v + r) - digamma(r);
            g2 += trigamma(v + r) - trigamma(r);
        }
        let (mut h0, mut h1, mut h2) = (0.0, 0.0, 0.0);
        for (&y, &m) in self.y.iter().zip(self.mu) {
            let rm = r + m;
            h0 += r * r.ln() - (r + y) * rm.ln();
            h1 += r.ln() + 1.0 - rm.ln() - (r + y) / rm;
            h2 += 1.0 / r - 2.0 / rm + (r + y) / (rm * rm);
        }
        (g0 + h0, g1 + h1, g2 + h2)
    }

    /// Maximize over `u = log r` in `[log SIZE_MIN, log SIZE_MAX]` by safeguarded Newton.
    fn maximize(&self, r0: f64) -> f64 {
        let (lo, hi) = (SIZE_MIN.ln(), SIZE_MAX.ln());
        let mut u = r0.clamp(SIZE_MIN, SIZE_MAX).ln();
        let (mut f, _, _) = self.eval(u.exp());
        for _ in 0..200 {
            let r = u.exp();
            let (_, d1, d2) = self.eval(r);
            let gu = r * d1;
            let hu = r * d1 + r * r * d2;
            let mut step = if hu < 0.0 {
                -gu / hu
            } else {
                gu.signum() * 1.0
            };
            step = step.clamp(-2.0, 2.0);
            let mut moved = false;
            for _ in 0..50 {
                let cand = (u + step).clamp(lo, hi);
                let (fc, _, _) = self.eval(cand.exp());
                if fc >= f {
                    moved = (cand - u).abs() > 0.0;
                    let done = (cand - u).abs() < 1e-10;
                    u = cand;
                    f = fc;
                    if done {
                        return u.exp();
                    }
                    break;
                }
                step *= 0.5;
            }
            if !moved {
                break;
            }
        }
        u.exp()
    }
}

/// NB log-likelihood of size `r` at fixed means, dropping `−Σ lnΓ(y+1)`.
pub fn nb_profile_loglik(y: &DVector<f64>, mu: &DVector<f64>, r: f64) -> Result<f64> {
    check_len(y.len(), mu.len())?;
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "size must be positive, got {r}"
        )));
    }
    validate_counts(y)?;
    let prof = SizeProfile::new(y.as_slice(), mu.as_slice());
    let mut ll = prof.eval(r).0;
    ll += y
        .iter()
        .zip(mu.iter())
        .map(|(&y, &m)| if y > 0.0 { y * m.ln() } else { 0.0 })
        .sum::<f64>();
    Ok(ll)
}

fn validate_counts(y: &DVector<f64>) -> Result<()> {
    if let Some(v) = y
        .iter()
        .find(|&&v| !(v >= 0.0) || v.fract() != 0.0 || !v.is_finite())
    {
        return Err(Error::Domain(format!(
            "negative binomial response must be a nonnegative integer, got {v}"
        )));
    }
    Ok(())
}

/// Negative binomial log-linear regression of `y` on `Z`.
pub fn fit_negbin(z: &DMatrix<f64>, y: &DVector<f64>, size: SizeSpec) -> Result<GlmFit> {
    check_inputs(z, y)?;
    validate_counts(y)?;
    let control = IrlsControl::default();
    match size {
        SizeSpec::Fixed(r) => {
            if !(r > 0.0) || !r.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "size must be positive, got {r}"
                )));
            }
            fit_glm(z, y, GlmFamily::NegBin { size: r }, Penalty::None, &control)
        }
        SizeSpec::Mom => {
            let pois = fit_glm(z, y, GlmFamily::Poisson, Penalty::None, &control)?;
            let r = estimate_size_mom(y, &pois.fitted_means)?;
            Ok(fit_glm_from(
                z,
                y,
                GlmFamily::NegBin { size: r },
                &control,
                &pois.coefficients,
            ))
        }
        SizeSpec::Ml => {
            let mut fit = fit_negbin(z, y, SizeSpec::Mom)?;
            let mut r = fit.dispersion_size.unwrap_or(1.0);
            let mut outer_converged = false;
            let mut iterations = fit.iterations;
            for _ in 0..50 {
                let prof = SizeProfile::new(y.as_slice(), fit.fitted_means.as_slice());
                let r_new = prof.maximize(r);
                let next = fit_glm_from(
                    z,
                    y,
                    GlmFamily::NegBin { size: r_new },
                    &control,
                    &fit.coefficients,
                );
                iterations += next.iterations;
                let db = (&next.coefficients - &fit.coefficients).amax();
                let du = (r_new.ln() - r.ln()).abs();
                fit = next;
                r = r_new;
                if du < 1e-8 && db < 1e-8 {
                    outer_converged = true;
                    break;
                }
            }
            fit.converged = fit.converged && outer_converged;
            fit.iterations = iterations;
            Ok(fit)
        }
    }
}
