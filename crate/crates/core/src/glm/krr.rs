//! Kernel ridge regression with an unpenalized intercept and an
//! eigenvalue-based choice of the ridge parameter.

use crate::error::{check_len, Error, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

const GRID_SIZE: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    /// `exp(−‖z − z'‖² / (2h²))`
    Gaussian { bandwidth: f64 },
    /// `z · z'`
    Linear,
}

impl Kernel {
    fn eval(self, a: impl Iterator<Item = f64>, b: impl Iterator<Item = f64>) -> f64 {
        match self {
            Kernel::Linear => a.zip(b).map(|(x, y)| x * y).sum(),
            Kernel::Gaussian { bandwidth } => {
                let d2: f64 = a.zip(b).map(|(x, y)| (x - y).powi(2)).sum();
                (-d2 / (2.0 * bandwidth * bandwidth)).exp()
            }
        }
    }

    fn gram(self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
            self.eval(a.row(i).iter().copied(), b.row(j).iter().copied())
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrrFit {
    pub dual_weights: DVector<f64>,
    pub intercept: f64,
    pub training_covariates: DMatrix<f64>,
    pub kernel: Kernel,
    pub lambda: f64,
    /// Eigenvalues of `K/n`, descending, negatives clamped to zero.
    pub eigenvalues: Vec<f64>,
}

impl KrrFit {
    /// `b + Σ_i w_i k(z, z_i)`.
    pub fn predict_mean(&self, z: &DMatrix<f64>) -> Result<DVector<f64>> {
        check_len(self.training_covariates.ncols(), z.ncols())?;
        let k = self.kernel.gram(z, &self.training_covariates);
        let mut out = k * &self.dual_weights;
        out.add_scalar_mut(self.intercept);
        Ok(out)
    }
}

/// `(1/n) Σ κ_i² / (κ_i + λ)² + λ`.
pub fn krr_lambda_objective(eigenvalues: &[f64], lambda: f64) -> f64 {
    let n = eigenvalues.len() as f64;
    eigenvalues
        .iter()
        .map(|k| (k / (k + lambda)).powi(2))
        .sum::<f64>()
        / n
        + lambda
}

/// Fit `y ≈ b + Σ_i w_i k(·, z_i)` minimizing `‖y − b − Kw‖² + nλ w'Kw`.
///
/// The weights satisfy `(K + nλI) w = y − b` with `Σw = 0`. λ minimizes
/// [`krr_lambda_objective`] over a log grid spanning the spectrum of `K/n`.
pub fn fit_krr(z: &DMatrix<f64>, y: &DVector<f64>, kernel: Kernel) -> Result<KrrFit> {
    let n = y.len();
    check_len(z.nrows(), n)?;
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 observations, got {n}"
        )));
    }
    if let Kernel::Gaussian { bandwidth } = kernel {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
    }
    if z.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Domain(
            "non-finite value in regression inputs".into(),
        ));
    }
    let nf = n as f64;
    let gram = kernel.gram(z, z);
    let eig = SymmetricEigen::new(&gram / nf);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let kappa: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let vecs = eig.eigenvectors.select_columns(&order);

    let lo = kappa[n - 1] + 1e-12;
    let hi = kappa[0].max(lo);
    let lambda = (0..GRID_SIZE)
        .map(|i| {
            let t = i as f64 / (GRID_SIZE - 1) as f64;
            (lo.ln() + t * (hi / lo).ln()).exp()
        })
        .min_by(|&a, &b| {
            krr_lambda_objective(&kappa, a).total_cmp(&krr_lambda_objective(&kappa, b))
        })
        .unwrap_or(lo);

    // G⁻¹v = V diag(1/(n(κ+λ))) V'v with G = K + nλI
    let inv_diag = DVector::from_iterator(n, kappa.iter().map(|k| 1.0 / (nf * (k + lambda))));
    let ginv = |v: &DVector<f64>| &vecs * (vecs.tr_mul(v).component_mul(&inv_diag));
    let ones = DVector::from_element(n, 1.0);
    let g1 = ginv(&ones);
    let gy = ginv(y);
    let intercept = gy.sum() / g1.sum();
    // solving again avoids cancellation between the two large vectors
    let dual_weights = ginv(&y.add_scalar(-intercept));

    Ok(KrrFit {
        dual_weights,
        intercept,
        training_covariates: z.clone(),
        kernel,
        lambda,
        eigenvalues: kappa,
    })
}
