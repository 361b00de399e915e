//! L1-penalized GLMs by coordinate descent on the IRLS quadratic, plus
//! K-fold cross-validation over a log-spaced λ path.

use super::{
    check_inputs, deviance, diverged, linear_predictor, GlmFamily, GlmFit, IrlsControl, Penalty,
};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[inline]
fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Coordinate descent for `½ Σ w_i (z_i − b0 − x_i'β)² + nλ‖β‖₁`.
///
/// `resid` holds `z − b0 − Xβ` on entry and is kept in sync.
#[allow(clippy::too_many_arguments)]
fn cd_weighted(
    x: &DMatrix<f64>,
    w: &[f64],
    resid: &mut [f64],
    beta: &mut DVector<f64>,
    penalty: f64,
    tol: f64,
    max_sweeps: usize,
) -> usize {
    let n = x.nrows();
    let d = x.ncols();
    let sw: f64 = w.iter().sum();
    let xsq: Vec<f64> = (0..d)
        .map(|j| x.column(j).iter().zip(w).map(|(v, w)| w * v * v).sum())
        .collect();

    let update = |j: usize, beta: &mut DVector<f64>, resid: &mut [f64]| -> f64 {
        if j == 0 {
            let delta = resid.iter().zip(w).map(|(r, w)| w * r).sum::<f64>() / sw;
            if delta != 0.0 {
                beta[0] += delta;
                resid.iter_mut().for_each(|r| *r -= delta);
            }
            return delta.abs();
        }
        let c = j - 1;
        if xsq[c] <= 0.0 {
            return 0.0;
        }
        let col = x.column(c);
        let old = beta[j];
        let rho: f64 = (0..n).map(|i| w[i] * col[i] * resid[i]).sum::<f64>() + old * xsq[c];
        let new = soft_threshold(rho, penalty) / xsq[c];
        let delta = new - old;
        if delta != 0.0 {
            beta[j] = new;
            for i in 0..n {
                resid[i] -= delta * col[i];
            }
        }
        delta.abs()
    };

    let mut sweeps = 0;
    loop {
        // full sweep to refresh the active set
        let mut max_change = 0.0f64;
        for j in 0..=d {
            max_change = max_change.max(update(j, beta, resid));
        }
        sweeps += 1;
        if max_change < tol || sweeps >= max_sweeps {
            return sweeps;
        }
        let active: Vec<usize> = (1..=d).filter(|&j| beta[j] != 0.0).collect();
        loop {
            let mut m = update(0, beta, resid);
            for &j in &active {
                m = m.max(update(j, beta, resid));
            }
            sweeps += 1;
            if m < tol || sweeps >= max_sweeps {
                break;
            }
        }
        if sweeps >= max_sweeps {
            return sweeps;
        }
    }
}

pub(super) fn fit_l1(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    family: GlmFamily,
    lambda: f64,
    control: &IrlsControl,
    start: Option<&DVector<f64>>,
) -> Result<GlmFit> {
    let n = y.len();
    let p = z.ncols() + 1;
    let penalty = Penalty::L1(lambda);
    let mut beta = match start {
        Some(b) => b.clone(),
        None => {
            let mut b = DVector::zeros(p);
            b[0] = family.initial_intercept(y);
            b
        }
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
    let mut iterations = 0;
    let mut w = vec![0.0; n];
    let mut resid = vec![0.0; n];

    while iterations < control.max_iter {
        iterations += 1;
        for i in 0..n {
            w[i] = family.weight(mu[i]).max(1e-300);
            resid[i] = (y[i] - mu[i]) / family.dmu_deta(mu[i]).max(1e-300);
        }
        let mut target = beta.clone();
        cd_weighted(
            z,
            &w,
            &mut resid,
            &mut target,
            n as f64 * lambda,
            control.cd_tol,
            control.cd_max_sweeps,
        );

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
        beta = cand;
        obj = o_new.min(obj);
        dev = d_new;
        eta = e_new;
        mu = m_new;
        history.push(obj);
        if step <= control.tol {
            converged = true;
            break;
        }
    }
    Ok(GlmFit {
        coefficients: beta,
        family,
        penalty,
        converged: converged && !diverged(family, &eta),
        iterations,
        dispersion_size: match family {
            GlmFamily::NegBin { size } => Some(size),
            _ => None,
        },
        separation_fallback: false,
        fitted_means: mu,
        deviance: dev,
        objective_history: history,
    })
}

/// Smallest λ at which every non-intercept coefficient is zero:
/// `max_j |Σ_i z_ij (y_i − μ_0) s(μ_0)| / n` at the intercept-only fit.
pub fn lambda_max(z: &DMatrix<f64>, y: &DVector<f64>, family: GlmFamily) -> Result<f64> {
    check_inputs(z, y)?;
    let n = y.len() as f64;
    let mu0 = y.mean();
    let f = family.score_factor(mu0);
    Ok(z.column_iter()
        .map(|c| {
            (c.iter()
                .zip(y.iter())
                .map(|(z, y)| z * (y - mu0))
                .sum::<f64>()
                * f)
                .abs()
                / n
        })
        .fold(0.0, f64::max))
}

/// Fits along a decreasing λ sequence with warm starts.
pub fn lasso_path(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    family: GlmFamily,
    lambdas: &[f64],
    control: &IrlsControl,
) -> Result<Vec<GlmFit>> {
    check_inputs(z, y)?;
    family.validate_response(y)?;
    let mut out: Vec<GlmFit> = Vec::with_capacity(lambdas.len());
    for &l in lambdas {
        if !(l >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be nonnegative, got {l}"
            )));
        }
        let start = out.last().map(|f| f.coefficients.clone());
        out.push(fit_l1(z, y, family, l, control, start.as_ref())?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub n_folds: usize,
    pub n_lambda: usize,
    /// Smallest λ as a fraction of λ_max.
    pub min_ratio: f64,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            n_folds: 10,
            n_lambda: 50,
            min_ratio: 1e-3,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvRule {
    Min,
    OneSe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvLasso {
    pub lambdas: Vec<f64>,
    /// Mean held-out deviance per observation.
    pub cv_mean: Vec<f64>,
    pub cv_se: Vec<f64>,
    pub index_min: usize,
    pub index_1se: usize,
    /// Fold label of each observation.
    pub folds: Vec<usize>,
    pub fold_paths: Vec<Vec<GlmFit>>,
    pub full_path: Vec<GlmFit>,
}

impl CvLasso {
    pub fn lambda(&self, rule: CvRule) -> f64 {
        self.lambdas[self.index(rule)]
    }

    pub fn index(&self, rule: CvRule) -> usize {
        match rule {
            CvRule::Min => self.index_min,
            CvRule::OneSe => self.index_1se,
        }
    }

    /// The full-data fit at the λ chosen by `rule`.
    pub fn fit(&self, rule: CvRule) -> &GlmFit {
        &self.full_path[self.index(rule)]
    }
}

/// K-fold cross-validated lasso with seeded fold assignment.
pub fn cv_lasso(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    family: GlmFamily,
    config: &CvConfig,
    control: &IrlsControl,
) -> Result<CvLasso> {
    check_inputs(z, y)?;
    family.validate_response(y)?;
    let n = y.len();
    let k = config.n_folds;
    if k < 2 || k > n {
        return Err(Error::InvalidParameter(format!(
            "need 2 ≤ folds ≤ n, got {k}"
        )));
    }
    if config.n_lambda == 0 || !(config.min_ratio > 0.0 && config.min_ratio < 1.0) {
        return Err(Error::InvalidParameter("invalid lambda grid".into()));
    }
    let lmax = lambda_max(z, y, family)?.max(f64::MIN_POSITIVE);
    let lambdas: Vec<f64> = if config.n_lambda == 1 {
        vec![lmax]
    } else {
        let step = config.min_ratio.ln() / (config.n_lambda - 1) as f64;
        (0..config.n_lambda)
            .map(|i| lmax * (step * i as f64).exp())
            .collect()
    };

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let mut folds = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        folds[i] = rank % k;
    }

    let per_fold: Vec<(Vec<GlmFit>, Vec<f64>, usize)> = (0..k)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&i| folds[i] == f).collect();
            let zt = z.select_rows(&train);
            let yt = DVector::from_iterator(train.len(), train.iter().map(|&i| y[i]));
            let zv = z.select_rows(&test);
            let yv = DVector::from_iterator(test.len(), test.iter().map(|&i| y[i]));
            let path = lasso_path(&zt, &yt, family, &lambdas, control)?;
            let losses = path
                .iter()
                .map(|fit| {
                    let eta = linear_predictor(&zv, &fit.coefficients);
                    let mu = eta.map(|e| family.inv_link(e));
                    deviance(family, &yv, &eta, &mu) / test.len() as f64
                })
                .collect();
            Ok((path, losses, test.len()))
        })
        .collect::<Result<_>>()?;

    let total: f64 = per_fold.iter().map(|(_, _, m)| *m as f64).sum();
    let mut cv_mean = vec![0.0; lambdas.len()];
    let mut cv_se = vec![0.0; lambdas.len()];
    for l in 0..lambdas.len() {
        let mean = per_fold
            .iter()
            .map(|(_, loss, m)| loss[l] * *m as f64)
            .sum::<f64>()
            / total;
        let var = per_fold
            .iter()
            .map(|(_, loss, m)| (loss[l] - mean).powi(2) * *m as f64)
            .sum::<f64>()
            / total;
        cv_mean[l] = mean;
        cv_se[l] = (var / (k - 1) as f64).sqrt();
    }
    let index_min = (0..lambdas.len())
        .min_by(|&a, &b| cv_mean[a].total_cmp(&cv_mean[b]))
        .unwrap_or(0);
    let bound = cv_mean[index_min] + cv_se[index_min];
    // λ decreases with index, so the largest qualifying λ is the first one
    let index_1se = (0..=index_min)
        .find(|&l| cv_mean[l] <= bound)
        .unwrap_or(index_min);

    let full_path = lasso_path(z, y, family, &lambdas, control)?;
    Ok(CvLasso {
        lambdas,
        cv_mean,
        cv_se,
        index_min,
        index_1se,
        folds,
        fold_paths: per_fold.into_iter().map(|(p, _, _)| p).collect(),
        full_path,
    })
}
