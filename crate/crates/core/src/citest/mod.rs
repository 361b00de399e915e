//! Conditional independence tests built on the cross-residual statistic
//! `T = (1/n) Σ (x_i − μ̂_x(z_i))(y_i − μ̂_y(z_i))`.

mod asymptotic;
mod dcrt;
mod signflip;
mod spacrt;

pub use asymptotic::{gcm, gcm_from_residuals, score_test_nb, score_test_nb_with};
pub use dcrt::{dcrt, DcrtSampler};
pub use signflip::{signflip_spa, SignFlipCgf};
pub use spacrt::{bernoulli_closed_form, spacrt, spacrt_with, ClosedForm};

use crate::error::{check_len, Error, Result};
use crate::glm::{self, Kernel, Penalty, SizeSpec};
use crate::nef::NefFamily;
use crate::saddlepoint::SpaSolution;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::time::Duration;

/// Bounds applied to externally supplied Bernoulli means.
const MEAN_CLAMP: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub z: DMatrix<f64>,
}

impl Dataset {
    pub fn new(x: DVector<f64>, y: DVector<f64>, z: DMatrix<f64>) -> Result<Self> {
        check_len(x.len(), y.len())?;
        check_len(x.len(), z.nrows())?;
        if x.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        if x.iter()
            .chain(y.iter())
            .chain(z.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Domain("dataset contains non-finite values".into()));
        }
        Ok(Self { x, y, z })
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    /// Checks that `x` lies in the support of `family`.
    pub fn check_x_support(&self, family: NefFamily) -> Result<()> {
        let ok = |v: f64| match family {
            NefFamily::Bernoulli => v == 0.0 || v == 1.0,
            NefFamily::Poisson => v >= 0.0 && v.fract() == 0.0,
        };
        match self.x.iter().find(|&&v| !ok(v)) {
            Some(v) => Err(Error::Domain(format!(
                "x value {v} outside the {family:?} support"
            ))),
            None => Ok(()),
        }
    }
}

/// Per-observation plug-in estimates for the two conditional laws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedConditionals {
    pub theta_x: DVector<f64>,
    pub mu_x: DVector<f64>,
    pub mu_y: DVector<f64>,
    pub family: NefFamily,
}

impl FittedConditionals {
    /// From natural parameters of `X|Z` and means of `Y|Z`.
    pub fn new(theta_x: DVector<f64>, mu_y: DVector<f64>, family: NefFamily) -> Result<Self> {
        check_len(theta_x.len(), mu_y.len())?;
        if theta_x.iter().chain(mu_y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("fitted conditionals must be finite".into()));
        }
        let mu_x = theta_x.map(|t| family.mean(t));
        Ok(Self {
            theta_x,
            mu_x,
            mu_y,
            family,
        })
    }

    /// From means of both conditional laws; Bernoulli means are clamped to
    /// `[1e−15, 1 − 1e−15]` so the natural parameter stays finite.
    pub fn from_means(mu_x: DVector<f64>, mu_y: DVector<f64>, family: NefFamily) -> Result<Self> {
        check_len(mu_x.len(), mu_y.len())?;
        let clamped = mu_x.map(|m| match family {
            NefFamily::Bernoulli => m.clamp(MEAN_CLAMP, 1.0 - MEAN_CLAMP),
            NefFamily::Poisson => m.max(MEAN_CLAMP),
        });
        let theta_x = clamped
            .iter()
            .map(|&m| family.natural_parameter(m))
            .collect::<Result<Vec<_>>>()?;
        let mut fits = Self::new(DVector::from_vec(theta_x), mu_y, family)?;
        // keep the supplied means rather than their round trip through θ
        fits.mu_x = clamped;
        Ok(fits)
    }

    pub fn n(&self) -> usize {
        self.theta_x.len()
    }

    fn check(&self, data: &Dataset) -> Result<()> {
        check_len(data.n(), self.n())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[serde(rename = "spacrt")]
    SpaCrt,
    #[serde(rename = "dcrt")]
    Dcrt,
    Gcm,
    ScoreNb,
    #[serde(rename = "signflip_spa")]
    SignFlipSpa,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::SpaCrt => "spacrt",
            Method::Dcrt => "dcrt",
            Method::Gcm => "gcm",
            Method::ScoreNb => "score_nb",
            Method::SignFlipSpa => "signflip_spa",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "spacrt" => Method::SpaCrt,
            "dcrt" => Method::Dcrt,
            "gcm" => Method::Gcm,
            "score_nb" | "score" => Method::ScoreNb,
            "signflip_spa" | "signflip" => Method::SignFlipSpa,
            other => return Err(Error::InvalidParameter(format!("unknown method '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub p_left: f64,
    pub p_right: f64,
    pub p_two: f64,
    pub method: Method,
    /// Some side used the GCM (or normal) substitute.
    pub fallback_used: bool,
    /// The statistic was undefined and conservative p-values were reported.
    pub degenerate: bool,
    /// Right-tail saddlepoint solution.
    pub spa_detail: Option<SpaSolution>,
    /// Left-tail saddlepoint solution (on the negated problem).
    pub spa_detail_left: Option<SpaSolution>,
    pub elapsed: Duration,
}

impl TestOutcome {
    pub(crate) fn new(method: Method, statistic: f64, p_left: f64, p_right: f64) -> Self {
        Self {
            statistic,
            p_left,
            p_right,
            p_two: two_sided(p_left, p_right),
            method,
            fallback_used: false,
            degenerate: false,
            spa_detail: None,
            spa_detail_left: None,
            elapsed: Duration::ZERO,
        }
    }

    pub fn p_value(&self, side: Side) -> f64 {
        match side {
            Side::Left => self.p_left,
            Side::Right => self.p_right,
            Side::Two => self.p_two,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
    Two,
}

impl std::str::FromStr for Side {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(Side::Left),
            "right" => Ok(Side::Right),
            "two" | "both" => Ok(Side::Two),
            other => Err(Error::InvalidParameter(format!("unknown side '{other}'"))),
        }
    }
}

/// `min(1, 2 min(p_left, p_right))`
pub fn two_sided(p_left: f64, p_right: f64) -> f64 {
    (2.0 * p_left.min(p_right)).min(1.0)
}

/// `T = (1/n) Σ (x_i − μ̂_x,i)(y_i − μ̂_y,i)`.
pub fn test_statistic(data: &Dataset, fits: &FittedConditionals) -> Result<f64> {
    fits.check(data)?;
    let n = data.n() as f64;
    Ok(data
        .x
        .iter()
        .zip(fits.mu_x.iter())
        .zip(data.y.iter().zip(fits.mu_y.iter()))
        .map(|((x, mx), (y, my))| (x - mx) * (y - my))
        .sum::<f64>()
        / n)
}

/// Model for `X | Z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum XModel {
    Logistic {
        penalty: Penalty,
    },
    Poisson {
        penalty: Penalty,
    },
    /// Externally estimated means.
    Precomputed {
        mu: Vec<f64>,
        family: NefFamily,
    },
}

/// Model for `Y | Z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum YModel {
    NegBin { size: SizeSpec },
    Poisson,
    Logistic { penalty: Penalty },
    Krr { kernel: Kernel },
    Precomputed { mu: Vec<f64> },
}

/// Fitted conditionals plus fit diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub fits: FittedConditionals,
    pub x_converged: bool,
    pub y_converged: bool,
    pub y_size: Option<f64>,
}

/// Fit `X|Z` and `Y|Z` and assemble the plug-in conditionals.
pub fn fit_conditionals(data: &Dataset, xm: &XModel, ym: &YModel) -> Result<FitReport> {
    let mut supplied_mu_x = None;
    let (family, theta_x, x_converged) = match xm {
        XModel::Logistic { penalty } => {
            let f = glm::fit_logistic(&data.z, &data.x, *penalty)?;
            (
                NefFamily::Bernoulli,
                f.predict_natural(&data.z)?,
                f.converged,
            )
        }
        XModel::Poisson { penalty } => {
            let f = glm::fit_poisson(&data.z, &data.x, *penalty)?;
            (NefFamily::Poisson, f.predict_natural(&data.z)?, f.converged)
        }
        XModel::Precomputed { mu, family } => {
            check_len(data.n(), mu.len())?;
            let fits = FittedConditionals::from_means(
                DVector::from_column_slice(mu),
                DVector::zeros(mu.len()),
                *family,
            )?;
            supplied_mu_x = Some(fits.mu_x);
            (*family, fits.theta_x, true)
        }
    };
    let (mu_y, y_converged, y_size) = match ym {
        YModel::NegBin { size } => {
            let f = glm::fit_negbin(&data.z, &data.y, *size)?;
            (f.fitted_means.clone(), f.converged, f.dispersion_size)
        }
        YModel::Poisson => {
            let f = glm::fit_poisson(&data.z, &data.y, Penalty::None)?;
            (f.fitted_means.clone(), f.converged, None)
        }
        YModel::Logistic { penalty } => {
            let f = glm::fit_logistic(&data.z, &data.y, *penalty)?;
            (f.fitted_means.clone(), f.converged, None)
        }
        YModel::Krr { kernel } => {
            let f = glm::fit_krr(&data.z, &data.y, *kernel)?;
            (f.predict_mean(&data.z)?, true, None)
        }
        YModel::Precomputed { mu } => {
            check_len(data.n(), mu.len())?;
            (DVector::from_column_slice(mu), true, None)
        }
    };
    let mut fits = FittedConditionals::new(theta_x, mu_y, family)?;
    if let Some(mu_x) = supplied_mu_x {
        fits.mu_x = mu_x;
    }
    Ok(FitReport {
        fits,
        x_converged,
        y_converged,
        y_size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (Dataset, FittedConditionals) {
        let data = Dataset::new(
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![3.0, 1.0]),
            DMatrix::zeros(2, 0),
        )
        .unwrap();
        let fits = FittedConditionals::from_means(
            DVector::from_vec(vec![0.5, 0.5]),
            DVector::from_vec(vec![1.0, 2.0]),
            NefFamily::Bernoulli,
        )
        .unwrap();
        (data, fits)
    }

    #[test]
    fn statistic_by_hand() {
        // residual products 0.5·2 and −0.5·(−1)
        let (data, fits) = tiny();
        assert!((test_statistic(&data, &fits).unwrap() - 0.75).abs() < 1e-15);
        // products (0.5·2, −0.5·1) average to 0.25
        let fits2 = FittedConditionals::from_means(
            DVector::from_vec(vec![0.5, 0.5]),
            DVector::from_vec(vec![1.0, 0.0]),
            NefFamily::Bernoulli,
        )
        .unwrap();
        assert!((test_statistic(&data, &fits2).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn statistic_is_zero_when_x_matches_its_mean() {
        let data = Dataset::new(
            DVector::from_vec(vec![0.3, 0.7, 0.1]),
            DVector::from_vec(vec![1.0, 5.0, 2.0]),
            DMatrix::zeros(3, 0),
        )
        .unwrap();
        let fits =
            FittedConditionals::from_means(data.x.clone(), DVector::zeros(3), NefFamily::Poisson)
                .unwrap();
        assert!(test_statistic(&data, &fits).unwrap().abs() < 1e-15);
    }

    #[test]
    fn structural_errors() {
        let (data, _) = tiny();
        let fits =
            FittedConditionals::new(DVector::zeros(3), DVector::zeros(3), NefFamily::Bernoulli)
                .unwrap();
        assert!(matches!(
            test_statistic(&data, &fits),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(Dataset::new(DVector::zeros(2), DVector::zeros(3), DMatrix::zeros(2, 0)).is_err());
        assert!(Dataset::new(DVector::zeros(0), DVector::zeros(0), DMatrix::zeros(0, 0)).is_err());
        assert!(FittedConditionals::new(
            DVector::from_vec(vec![f64::NAN]),
            DVector::zeros(1),
            NefFamily::Bernoulli
        )
        .is_err());
    }

    #[test]
    fn from_means_clamps_and_is_consistent() {
        let f = FittedConditionals::from_means(
            DVector::from_vec(vec![0.0, 1.0, 0.3]),
            DVector::zeros(3),
            NefFamily::Bernoulli,
        )
        .unwrap();
        assert!(f.theta_x.iter().all(|t| t.is_finite()));
        for i in 0..3 {
            let m = NefFamily::Bernoulli.derivative(f.theta_x[i], 1).unwrap();
            assert!((f.mu_x[i] - m).abs() <= 1e-12);
        }
        assert!((f.mu_x[2] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn method_names_round_trip() {
        for m in [
            Method::SpaCrt,
            Method::Dcrt,
            Method::Gcm,
            Method::ScoreNb,
            Method::SignFlipSpa,
        ] {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("bogus".parse::<Method>().is_err());
    }
}
