use super::{test_statistic, Dataset, FittedConditionals, Method, TestOutcome};
use crate::error::{Error, Result};
use crate::nef::NefFamily;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use std::time::Instant;

/// Bernoulli probabilities at or above `2^-DENSE_LEVELS` are drawn one by one.
const DENSE_LEVELS: i32 = 2;

/// Indices whose (folded) success probability lies in `(q/2, q]`, `q = 2^-level`.
#[derive(Debug, Clone)]
struct Bucket {
    q: f64,
    log1m_q: f64,
    dense: bool,
    prob: Vec<f64>,
    coef: Vec<f64>,
}

#[derive(Debug, Clone)]
enum Kind {
    Bernoulli {
        buckets: Vec<Bucket>,
        base: f64,
    },
    Poisson {
        laws: Vec<Option<Poisson<f64>>>,
        a: Vec<f64>,
    },
}

/// Draws the resampled statistic `T̃ = (1/n) Σ a_i (X̃_i − μ̂_x,i)`.
///
/// Bernoulli draws skip geometrically over sparse probability buckets and thin
/// back to the exact per-observation probability, so the cost per draw is
/// proportional to the expected number of successes rather than to `n`.
#[derive(Debug, Clone)]
pub struct DcrtSampler {
    kind: Kind,
    center: f64,
    n: f64,
    /// Comparison slack absorbing summation-order rounding.
    pub tie_tolerance: f64,
}

impl DcrtSampler {
    pub fn new(data: &Dataset, fits: &FittedConditionals) -> Result<Self> {
        if data.n() != fits.n() {
            return Err(Error::DimensionMismatch {
                expected: data.n(),
                found: fits.n(),
            });
        }
        let a: Vec<f64> = data
            .y
            .iter()
            .zip(fits.mu_y.iter())
            .map(|(y, m)| y - m)
            .collect();
        let center: f64 = a.iter().zip(fits.mu_x.iter()).map(|(a, m)| a * m).sum();
        let scale: f64 = a
            .iter()
            .zip(fits.mu_x.iter())
            .map(|(a, m)| a.abs() * (1.0 + m))
            .sum();
        let n = data.n() as f64;
        let kind = match fits.family {
            NefFamily::Bernoulli => {
                let mut base = 0.0;
                let mut buckets: Vec<Bucket> = Vec::new();
                for (&ai, &theta) in a.iter().zip(fits.theta_x.iter()) {
                    if ai == 0.0 {
                        continue;
                    }
                    // fold p > 1/2 onto its complement: a X̃ = a − a (1 − X̃)
                    let (p, c) = if theta > 0.0 {
                        base += ai;
                        (NefFamily::Bernoulli.mean(-theta), -ai)
                    } else {
                        (NefFamily::Bernoulli.mean(theta), ai)
                    };
                    if p <= 0.0 {
                        continue;
                    }
                    let level = (-p.log2()).floor().max(1.0) as i32;
                    let level = if 2f64.powi(-level) < p {
                        level - 1
                    } else {
                        level
                    };
                    let idx = level as usize;
                    if buckets.len() <= idx {
                        buckets.extend((buckets.len()..=idx).map(|l| {
                            let q = 2f64.powi(-(l as i32));
                            Bucket {
                                q,
                                log1m_q: (-q).ln_1p(),
                                dense: l as i32 <= DENSE_LEVELS,
                                prob: vec![],
                                coef: vec![],
                            }
                        }));
                    }
                    buckets[idx].prob.push(p);
                    buckets[idx].coef.push(c);
                }
                buckets.retain(|b| !b.prob.is_empty());
                Kind::Bernoulli { buckets, base }
            }
            NefFamily::Poisson => {
                let laws = fits
                    .theta_x
                    .iter()
                    .map(|t| Poisson::new(t.exp()).ok())
                    .collect();
                Kind::Poisson { laws, a }
            }
        };
        Ok(Self {
            kind,
            center,
            n,
            tie_tolerance: 1e-12 * scale / n,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let total = match &self.kind {
            Kind::Bernoulli { buckets, base } => {
                let mut s = *base;
                for b in buckets {
                    if b.dense {
                        for (p, c) in b.prob.iter().zip(&b.coef) {
                            if rng.random::<f64>() < *p {
                                s += c;
                            }
                        }
                        continue;
                    }
                    let len = b.prob.len();
                    let mut j = 0usize;
                    loop {
                        let u: f64 = 1.0 - rng.random::<f64>();
                        let skip = (u.ln() / b.log1m_q).floor();
                        if skip >= (len - j) as f64 {
                            break;
                        }
                        j += skip as usize;
                        if rng.random::<f64>() * b.q < b.prob[j] {
                            s += b.coef[j];
                        }
                        j += 1;
                        if j >= len {
                            break;
                        }
                    }
                }
                s
            }
            Kind::Poisson { laws, a } => laws
                .iter()
                .zip(a)
                .map(|(law, a)| law.as_ref().map_or(0.0, |d| a * d.sample(rng)))
                .sum(),
        };
        (total - self.center) / self.n
    }
}

/// Resampling test with `M` draws from the fitted law of `X | Z`.
///
/// `p_right = (1 + #{T̃ ≥ T}) / (M + 1)` and `p_left = (1 + #{T̃ ≤ T}) / (M + 1)`.
pub fn dcrt<R: Rng + ?Sized>(
    data: &Dataset,
    fits: &FittedConditionals,
    m: usize,
    rng: &mut R,
) -> Result<TestOutcome> {
    if m == 0 {
        return Err(Error::InvalidParameter(
            "number of resamples must be at least 1".into(),
        ));
    }
    let start = Instant::now();
    let t = test_statistic(data, fits)?;
    let sampler = DcrtSampler::new(data, fits)?;
    let tol = sampler.tie_tolerance;
    let (mut ge, mut le) = (0usize, 0usize);
    for _ in 0..m {
        let s = sampler.sample(rng);
        if s >= t - tol {
            ge += 1;
        }
        if s <= t + tol {
            le += 1;
        }
    }
    let denom = (m + 1) as f64;
    let mut out = TestOutcome::new(
        Method::Dcrt,
        t,
        (1 + le) as f64 / denom,
        (1 + ge) as f64 / denom,
    );
    out.elapsed = start.elapsed();
    Ok(out)
}
