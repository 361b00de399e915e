use crate::citest::Dataset;
use crate::error::{Error, Result};
use crate::hmm::{Hmm, HmmGenerator};
use crate::nef::expit;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

/// CRISPR-screen model:
/// `Z ~ N(0,1)`, `X | Z ~ Ber(expit(γ0 + Z))`,
/// `Y | X, Z ~ NB(mean exp(β0 + ρX + Z), size r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrisprParams {
    pub gamma0: f64,
    pub beta0: f64,
    pub rho: f64,
    pub size: f64,
    pub n: usize,
}

impl Default for CrisprParams {
    fn default() -> Self {
        Self {
            gamma0: -5.0,
            beta0: -5.0,
            rho: 0.0,
            size: 1.0,
            n: 5000,
        }
    }
}

impl CrisprParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.size > 0.0) || !self.size.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "size must be positive, got {}",
                self.size
            )));
        }
        if self.n == 0 {
            return Err(Error::InvalidParameter("n must be at least 1".into()));
        }
        if ![self.gamma0, self.beta0, self.rho]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::InvalidParameter(
                "coefficients must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// One NB(μ, r) draw as a Poisson with Gamma(shape r, scale μ/r) rate.
pub fn sample_negbin<R: Rng + ?Sized>(mu: f64, size: f64, rng: &mut R) -> f64 {
    let rate = match Gamma::new(size, mu / size) {
        Ok(g) => g.sample(rng),
        Err(_) => 0.0,
    };
    match Poisson::new(rate) {
        Ok(p) => p.sample(rng),
        Err(_) => 0.0,
    }
}

pub fn simulate_crispr<R: Rng + ?Sized>(params: &CrisprParams, rng: &mut R) -> Result<Dataset> {
    params.validate()?;
    let n = params.n;
    let mut x = DVector::zeros(n);
    let mut y = DVector::zeros(n);
    let mut z = DMatrix::zeros(n, 1);
    for i in 0..n {
        let zi: f64 = StandardNormal.sample(rng);
        let xi = (rng.random::<f64>() < expit(params.gamma0 + zi)) as u8 as f64;
        let mu = (params.beta0 + params.rho * xi + zi).exp();
        z[(i, 0)] = zi;
        x[i] = xi;
        y[i] = sample_negbin(mu, params.size, rng);
    }
    Dataset::new(x, y, z)
}

/// GWAS model: `X` from a random HMM, `Y | X ~ Ber(expit(γ0 + Xᵀβ))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GwasParams {
    pub hmm: HmmGenerator,
    pub d: usize,
    pub n: usize,
    pub gamma0: f64,
    pub eta: f64,
}

impl Default for GwasParams {
    fn default() -> Self {
        Self {
            hmm: HmmGenerator::default(),
            d: 500,
            n: 2000,
            gamma0: -2.0,
            eta: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GwasData {
    pub hmm: Hmm,
    /// Genotype sequences, one per row.
    pub sequences: Vec<Vec<usize>>,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub beta: Vec<f64>,
}

impl GwasData {
    /// Indices of coordinates with a nonzero coefficient.
    pub fn signals(&self) -> Vec<usize> {
        self.beta
            .iter()
            .enumerate()
            .filter(|(_, b)| **b != 0.0)
            .map(|(j, _)| j)
            .collect()
    }
}

/// `round(0.05 d)` coordinates at `+η`, the next `round(0.05 d)` at `−η`, zeros after.
pub fn signal_pattern(d: usize, eta: f64) -> Vec<f64> {
    let k = ((0.05 * d as f64).round() as usize).min(d / 2);
    (0..d)
        .map(|j| {
            if eta == 0.0 || j >= 2 * k {
                0.0
            } else if j < k {
                eta
            } else {
                -eta
            }
        })
        .collect()
}

pub fn simulate_gwas<R: Rng + ?Sized>(params: &GwasParams, rng: &mut R) -> Result<GwasData> {
    if params.d == 0 || params.n == 0 {
        return Err(Error::InvalidParameter("d and n must be at least 1".into()));
    }
    let hmm = params.hmm.generate(params.d, rng)?;
    let sequences = hmm.sample(params.n, rng);
    let beta = signal_pattern(params.d, params.eta);
    let x = DMatrix::from_fn(params.n, params.d, |i, j| sequences[i][j] as f64);
    let y = DVector::from_fn(params.n, |i, _| {
        let eta = params.gamma0 + x.row(i).iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
        (rng.random::<f64>() < expit(eta)) as u8 as f64
    });
    Ok(GwasData {
        hmm,
        sequences,
        x,
        y,
        beta,
    })
}
