use super::{Dataset, FittedConditionals, Method, TestOutcome};
use crate::error::{check_len, Error, Result};
use crate::glm::{fit_negbin, SizeSpec};
use crate::normal;
use nalgebra::{DMatrix, DVector};
use std::time::Instant;

fn degenerate(method: Method, statistic: f64) -> TestOutcome {
    let mut out = TestOutcome::new(method, statistic, 1.0, 1.0);
    out.degenerate = true;
    out
}

fn normal_outcome(method: Method, stat: f64) -> TestOutcome {
    TestOutcome::new(method, stat, normal::cdf(stat), normal::sf(stat))
}

/// Generalized covariance measure on the products `R_i = r_x,i r_y,i`:
/// `T = √n · mean(R) / sd(R)` with the population standard deviation.
pub fn gcm_from_residuals(rx: &[f64], ry: &[f64]) -> Result<TestOutcome> {
    check_len(rx.len(), ry.len())?;
    if rx.is_empty() {
        return Err(Error::Empty("residuals"));
    }
    let start = Instant::now();
    let n = rx.len() as f64;
    let (mut m1, mut m2) = (0.0, 0.0);
    for (a, b) in rx.iter().zip(ry) {
        let r = a * b;
        m1 += r;
        m2 += r * r;
    }
    m1 /= n;
    m2 /= n;
    let var = m2 - m1 * m1;
    let mut out = if !(var > 1e-12 * m2) {
        degenerate(Method::Gcm, 0.0)
    } else {
        normal_outcome(Method::Gcm, n.sqrt() * m1 / var.sqrt())
    };
    out.elapsed = start.elapsed();
    Ok(out)
}

pub fn gcm(data: &Dataset, fits: &FittedConditionals) -> Result<TestOutcome> {
    check_len(data.n(), fits.n())?;
    let rx: Vec<f64> = data
        .x
        .iter()
        .zip(fits.mu_x.iter())
        .map(|(x, m)| x - m)
        .collect();
    let ry: Vec<f64> = data
        .y
        .iter()
        .zip(fits.mu_y.iter())
        .map(|(y, m)| y - m)
        .collect();
    gcm_from_residuals(&rx, &ry)
}

/// Score test for adding `x` to a negative binomial regression of `y` on `z`,
/// with the size estimated by maximum likelihood.
pub fn score_test_nb(data: &Dataset) -> Result<TestOutcome> {
    score_test_nb_with(data, SizeSpec::Ml)
}

/// Score test under the null fit `y ~ NB(μ(z), r)` with log link.
///
/// `U = Σ x_i (y_i − μ_i) / (1 + μ_i/r)` and `I` is the efficient information
/// for the `x` coefficient after projecting out the intercept and `z`.
pub fn score_test_nb_with(data: &Dataset, size: SizeSpec) -> Result<TestOutcome> {
    let start = Instant::now();
    let fit = fit_negbin(&data.z, &data.y, size)?;
    let r = fit.dispersion_size.unwrap_or(f64::INFINITY);
    let mu = &fit.fitted_means;
    let n = data.n();
    let p = data.z.ncols() + 1;
    let w = DVector::from_iterator(n, mu.iter().map(|&m| m / (1.0 + m / r)));
    let u: f64 = (0..n)
        .map(|i| data.x[i] * (data.y[i] - mu[i]) / (1.0 + mu[i] / r))
        .sum();

    let d = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { data.z[(i, j - 1)] });
    let mut dtwd = DMatrix::zeros(p, p);
    let mut dtwx = DVector::zeros(p);
    let mut xtwx = 0.0;
    for i in 0..n {
        let wi = w[i];
        let xi = data.x[i];
        xtwx += wi * xi * xi;
        for a in 0..p {
            let da = d[(i, a)] * wi;
            dtwx[a] += da * xi;
            for b in 0..=a {
                dtwd[(a, b)] += da * d[(i, b)];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            dtwd[(b, a)] = dtwd[(a, b)];
        }
    }
    let proj: f64 = match dtwd.clone().cholesky() {
        Some(c) => dtwx.dot(&c.solve(&dtwx)),
        None => {
            let pinv = dtwd
                .pseudo_inverse(1e-12)
                .map_err(|e| Error::Numerical(format!("information matrix: {e}")))?;
            dtwx.dot(&(pinv * &dtwx))
        }
    };
    let info: f64 = xtwx - proj;
    let mut out = if !(info > 1e-10 * xtwx.max(f64::MIN_POSITIVE)) {
        // x lies in the span of the nuisance design
        degenerate(Method::ScoreNb, 0.0)
    } else {
        normal_outcome(Method::ScoreNb, u / info.sqrt())
    };
    out.elapsed = start.elapsed();
    Ok(out)
}
