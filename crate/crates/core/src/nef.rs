//! Natural exponential families for the conditional law of the tested variable.
//!
//! A family is described by its log-partition function `A`; the density is
//! `exp(θx − A(θ)) h(x)` with natural parameter `θ` ranging over the real line.
//! Only the Bernoulli (logit link) and Poisson (log link) members are supported.
//!
//! The main downstream quantity is the centered conditional CGF of a resampled
//! cross-residual summand `a·(X̃ − A'(θ))`:
//!
//! ```text
//! K(s) = A(θ + a s) − A(θ) − a s A'(θ)
//! ```
//!
//! evaluated here without catastrophic cancellation for small `a s`.

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

const SOFTPLUS_SWITCH: f64 = 35.0;

/// log(1 + e^θ) without overflow.
#[inline]
pub fn softplus(theta: f64) -> f64 {
    if theta > SOFTPLUS_SWITCH {
        theta + (-theta).exp().ln_1p()
    } else {
        theta.exp().ln_1p()
    }
}

/// 1 / (1 + e^−θ)
#[inline]
pub fn expit(theta: f64) -> f64 {
    if theta >= 0.0 {
        1.0 / (1.0 + (-theta).exp())
    } else {
        let e = theta.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NefFamily {
    Bernoulli,
    Poisson,
}

/// One summand of the resampled statistic: natural parameter `θ̂_x(z_i)` and
/// residual multiplier `a_i = y_i − μ̂_y(z_i)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CgfTerm {
    pub theta: f64,
    pub a: f64,
}

impl CgfTerm {
    pub fn new(theta: f64, a: f64) -> Result<Self> {
        if !theta.is_finite() || !a.is_finite() {
            return Err(Error::Domain(format!(
                "cgf term must be finite (theta={theta}, a={a})"
            )));
        }
        Ok(Self { theta, a })
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if theta.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "natural parameter must be finite, got {theta}"
        )))
    }
}

impl NefFamily {
    /// A(θ).
    pub fn log_partition(self, theta: f64) -> Result<f64> {
        check_theta(theta)?;
        Ok(self.log_partition_unchecked(theta))
    }

    #[inline]
    pub(crate) fn log_partition_unchecked(self, theta: f64) -> f64 {
        match self {
            NefFamily::Bernoulli => softplus(theta),
            NefFamily::Poisson => theta.exp(),
        }
    }

    /// The `order`-th derivative of A at θ, for orders 1 through 4.
    ///
    /// Order 1 is the mean, order 2 the variance, order 3 the third central
    /// moment and order 4 the fourth cumulant.
    pub fn derivative(self, theta: f64, order: u8) -> Result<f64> {
        check_theta(theta)?;
        if !(1..=4).contains(&order) {
            return Err(Error::Domain(format!(
                "log-partition derivative order must be 1..=4, got {order}"
            )));
        }
        Ok(match self {
            NefFamily::Poisson => theta.exp(),
            NefFamily::Bernoulli => {
                let mu = expit(theta);
                let nu = expit(-theta);
                match order {
                    1 => mu,
                    2 => mu * nu,
                    3 => mu * nu * (nu - mu),
                    _ => mu * nu * (1.0 - 6.0 * mu * nu),
                }
            }
        })
    }

    /// A'(θ), the mean.
    #[inline]
    pub fn mean(self, theta: f64) -> f64 {
        match self {
            NefFamily::Bernoulli => expit(theta),
            NefFamily::Poisson => theta.exp(),
        }
    }

    /// A''(θ), the variance.
    #[inline]
    pub fn variance(self, theta: f64) -> f64 {
        match self {
            NefFamily::Bernoulli => expit(theta) * expit(-theta),
            NefFamily::Poisson => theta.exp(),
        }
    }

    /// Inverse of the mean map (the canonical link).
    pub fn natural_parameter(self, mean: f64) -> Result<f64> {
        let ok = match self {
            NefFamily::Bernoulli => mean > 0.0 && mean < 1.0,
            NefFamily::Poisson => mean > 0.0 && mean.is_finite(),
        };
        if !ok {
            return Err(Error::Domain(format!(
                "mean {mean} is outside the interior of the {self:?} mean space"
            )));
        }
        Ok(match self {
            NefFamily::Bernoulli => logit(mean),
            NefFamily::Poisson => mean.ln(),
        })
    }

    /// Draw one observation from f(·|θ).
    pub fn sample<R: Rng + ?Sized>(self, theta: f64, rng: &mut R) -> f64 {
        match self {
            NefFamily::Bernoulli => {
                let u: f64 = rng.random();
                if u < expit(theta) {
                    1.0
                } else {
                    0.0
                }
            }
            NefFamily::Poisson => {
                let rate = theta.exp();
                if rate <= 0.0 {
                    return 0.0;
                }
                match Poisson::new(rate) {
                    Ok(d) => d.sample(rng),
                    // rates beyond the sampler's range are effectively deterministic
                    Err(_) => rate.round(),
                }
            }
        }
    }

    /// K(s) = A(θ + a s) − A(θ) − a s A'(θ).
    pub fn centered_cgf(self, term: CgfTerm, s: f64) -> f64 {
        let h = term.a * s;
        match self {
            NefFamily::Bernoulli => bernoulli_centered(term.theta, h),
            NefFamily::Poisson => term.theta.exp() * expm1_minus_x(h),
        }
    }

    /// dK/ds = a (A'(θ + a s) − A'(θ)); exactly zero at s = 0.
    pub fn centered_cgf_d1(self, term: CgfTerm, s: f64) -> f64 {
        let h = term.a * s;
        term.a
            * match self {
                NefFamily::Bernoulli => expit_increment(term.theta, h),
                NefFamily::Poisson => term.theta.exp() * h.exp_m1(),
            }
    }

    /// d²K/ds² = a² A''(θ + a s).
    pub fn centered_cgf_d2(self, term: CgfTerm, s: f64) -> f64 {
        term.a * term.a * self.variance(term.theta + term.a * s)
    }

    /// Limits of dK/ds as s → −∞ and s → +∞.
    pub(crate) fn centered_cgf_d1_range(self, term: CgfTerm) -> (f64, f64) {
        let a = term.a;
        if a == 0.0 {
            return (0.0, 0.0);
        }
        match self {
            NefFamily::Bernoulli => {
                let mu = expit(term.theta);
                let nu = expit(-term.theta);
                if a > 0.0 {
                    (-a * mu, a * nu)
                } else {
                    (a * nu, -a * mu)
                }
            }
            NefFamily::Poisson => {
                let m = term.theta.exp();
                if a > 0.0 {
                    (-a * m, f64::INFINITY)
                } else {
                    (f64::NEG_INFINITY, -a * m)
                }
            }
        }
    }
}

/// expit(θ + h) − expit(θ), accurate for small h.
#[inline]
pub(crate) fn expit_increment(theta: f64, h: f64) -> f64 {
    if h.abs() < 1.0 {
        // σ(θ+h) − σ(θ) = (e^h − 1) σ(θ) σ(−θ−h)
        h.exp_m1() * expit(theta) * expit(-theta - h)
    } else {
        expit(theta + h) - expit(theta)
    }
}

/// e^h − 1 − h
#[inline]
fn expm1_minus_x(h: f64) -> f64 {
    if h.abs() < 1e-2 {
        let h2 = h * h;
        h2 * (0.5
            + h * (1.0 / 6.0
                + h * (1.0 / 24.0 + h * (1.0 / 120.0 + h * (1.0 / 720.0 + h / 5040.0)))))
    } else {
        h.exp_m1() - h
    }
}

/// softplus(θ + h) − softplus(θ) − h expit(θ)
fn bernoulli_centered(theta: f64, h: f64) -> f64 {
    let mu = expit(theta);
    let nu = expit(-theta);
    if h.abs() < 1e-3 {
        // cumulant series in h; the neglected h^6 term is below double precision
        let k2 = mu * nu;
        let k3 = k2 * (nu - mu);
        let k4 = k2 * (1.0 - 6.0 * k2);
        let k5 = k3 * (1.0 - 12.0 * k2);
        let h2 = h * h;
        h2 * (k2 / 2.0 + h * (k3 / 6.0 + h * (k4 / 24.0 + h * k5 / 120.0)))
    } else if h.abs() > 700.0 {
        softplus(theta + h) - softplus(theta) - h * mu
    } else if h >= 0.0 {
        (mu * h.exp_m1()).ln_1p() - h * mu
    } else {
        (nu * (-h).exp_m1()).ln_1p() + h * nu
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const FAMILIES: [NefFamily; 2] = [NefFamily::Bernoulli, NefFamily::Poisson];

    #[test]
    fn bernoulli_log_partition_values() {
        let b = NefFamily::Bernoulli;
        assert!((b.log_partition(0.0).unwrap() - 2f64.ln()).abs() < 1e-15);
        // log(1 + e^50) = 50 + log1p(e^-50) = 50 + 1.9287498479639178e-22
        assert_eq!(b.log_partition(50.0).unwrap(), 50.0);
        assert!(b.log_partition(800.0).unwrap().is_finite());
        assert!((b.log_partition(-50.0).unwrap() - 1.928_749_847_963_917_8e-22).abs() < 1e-36);
        for &t in &[-3.0, -0.5, 0.7, 4.0] {
            let direct = (1.0 + f64::exp(t)).ln();
            assert!((b.log_partition(t).unwrap() - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn non_finite_theta_is_rejected() {
        for f in FAMILIES {
            assert!(matches!(f.log_partition(f64::NAN), Err(Error::Domain(_))));
            assert!(matches!(
                f.derivative(f64::INFINITY, 1),
                Err(Error::Domain(_))
            ));
        }
        assert!(CgfTerm::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn derivative_values() {
        let b = NefFamily::Bernoulli;
        assert!((b.derivative(0.0, 2).unwrap() - 0.25).abs() < 1e-16);
        assert!((b.derivative(logit(0.3), 2).unwrap() - 0.21).abs() < 1e-15);
        assert!((b.derivative(logit(0.3), 1).unwrap() - 0.3).abs() < 1e-15);
        let p = NefFamily::Poisson;
        assert!((p.derivative(1.0, 1).unwrap() - std::f64::consts::E).abs() < 1e-15);
        assert!(matches!(b.derivative(0.0, 5), Err(Error::Domain(_))));
        assert!(matches!(p.derivative(0.0, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn higher_derivatives_match_finite_differences() {
        let h = 1e-4;
        for f in FAMILIES {
            for &t in &[-2.0, -0.3, 0.0, 0.8, 2.5] {
                for order in 2..=4u8 {
                    let fd = (f.derivative(t + h, order - 1).unwrap()
                        - f.derivative(t - h, order - 1).unwrap())
                        / (2.0 * h);
                    let exact = f.derivative(t, order).unwrap();
                    assert!((fd - exact).abs() < 1e-7, "{f:?} θ={t} order={order}");
                }
            }
        }
    }

    #[test]
    fn centered_cgf_trivial_cases() {
        for f in FAMILIES {
            for &s in &[-3.0, 0.0, 0.5, 7.0] {
                let t = CgfTerm::new(0.4, 0.0).unwrap();
                assert_eq!(f.centered_cgf(t, s), 0.0);
                assert_eq!(f.centered_cgf_d1(t, s), 0.0);
            }
            let t = CgfTerm::new(-1.2, 2.5).unwrap();
            assert_eq!(f.centered_cgf(t, 0.0), 0.0);
            assert_eq!(f.centered_cgf_d1(t, 0.0), 0.0);
        }
    }

    #[test]
    fn centered_cgf_by_enumeration() {
        // log E[e^{X - 1/2}] with X ~ Ber(1/2): log((1 + e)/2) - 1/2
        let t = CgfTerm::new(0.0, 1.0).unwrap();
        let expected = ((1.0 + std::f64::consts::E) / 2.0).ln() - 0.5;
        let got = NefFamily::Bernoulli.centered_cgf(t, 1.0);
        assert!((got - expected).abs() < 1e-15);
    }

    #[test]
    fn centered_cgf_small_argument_is_accurate() {
        // compare the series branch against a high-accuracy evaluation at the branch boundary
        let b = NefFamily::Bernoulli;
        for &theta in &[-4.0, 0.0, 1.3] {
            let t = CgfTerm::new(theta, 1.0).unwrap();
            let below = b.centered_cgf(t, 0.999_999e-3);
            let above = b.centered_cgf(t, 1.000_001e-3);
            assert!(((above - below) / below).abs() < 1e-5);
        }
    }

    #[test]
    fn sampling_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let m: f64 = (0..n)
            .map(|_| NefFamily::Bernoulli.sample(0.0, &mut rng))
            .sum::<f64>()
            / n as f64;
        assert!((m - 0.5).abs() < 0.002, "{m}");
        let m: f64 = (0..n)
            .map(|_| NefFamily::Poisson.sample(4f64.ln(), &mut rng))
            .sum::<f64>()
            / n as f64;
        assert!((m - 4.0).abs() < 0.01, "{m}");
        let ones = (0..10_000)
            .filter(|_| NefFamily::Bernoulli.sample(logit(1e-9), &mut rng) != 0.0)
            .count();
        assert_eq!(ones, 0);
    }

    #[test]
    fn sampling_is_reproducible() {
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|_| NefFamily::Poisson.sample(1.0, &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
    }

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-6)
    }

    proptest! {
        #[test]
        fn cgf_derivatives_match_finite_differences(
            theta in -4.0f64..4.0,
            a in -3.0f64..3.0,
            s in -1.5f64..1.5,
            bern in proptest::bool::ANY,
        ) {
            let f = if bern { NefFamily::Bernoulli } else { NefFamily::Poisson };
            let t = CgfTerm::new(theta, a).unwrap();
            let h = 1e-5;
            let d1 = (f.centered_cgf(t, s + h) - f.centered_cgf(t, s - h)) / (2.0 * h);
            let d2 = (f.centered_cgf_d1(t, s + h) - f.centered_cgf_d1(t, s - h)) / (2.0 * h);
            prop_assert!(rel_close(d1, f.centered_cgf_d1(t, s), 1e-6));
            prop_assert!(rel_close(d2, f.centered_cgf_d2(t, s), 1e-6));
        }

        #[test]
        fn cgf_is_convex_and_mean_zero(theta in -30.0f64..30.0, a in -20.0f64..20.0, s in -5.0f64..5.0) {
            for f in FAMILIES {
                let t = CgfTerm::new(theta, a).unwrap();
                prop_assert!(f.centered_cgf_d2(t, s) >= 0.0);
                prop_assert_eq!(f.centered_cgf_d1(t, 0.0), 0.0);
            }
        }

        #[test]
        fn mean_and_variance_ranges(theta in -700.0f64..700.0) {
            let mu = NefFamily::Bernoulli.derivative(theta, 1).unwrap();
            prop_assert!((0.0..=1.0).contains(&mu));
            if theta.abs() < 36.0 {
                prop_assert!(mu > 0.0 && mu < 1.0);
                prop_assert!(NefFamily::Bernoulli.derivative(theta, 2).unwrap() > 0.0);
            }
            if theta.abs() < 700.0 {
                prop_assert!(NefFamily::Poisson.derivative(theta, 2).unwrap() > 0.0);
            }
        }
    }
}
