//! Conditional saddlepoint approximation for the upper tail of a mean of
//! independent, mean-zero summands with known CGFs.
//!
//! The solver is generic over [`AggregateCgf`] so the same root finder serves
//! both the NEF resampling distribution ([`SpaInputs`]) and the sign-flipping
//! distribution used in `citest::signflip_spa`.

use crate::error::{Error, Result};
use crate::nef::{CgfTerm, NefFamily};
use crate::normal;
use serde::{Deserialize, Serialize};

/// Mean CGF `K_n(s) = (1/n) Σ K_i(s)` of a sum of independent mean-zero terms.
pub trait AggregateCgf {
    fn n(&self) -> usize;
    fn k(&self, s: f64) -> f64;
    /// Must be exactly zero at `s = 0`.
    fn k_prime(&self, s: f64) -> f64;
    fn k_second(&self, s: f64) -> f64;
    /// Limits of `K_n'` as `s → −∞` and `s → +∞`.
    fn k_prime_range(&self) -> (f64, f64);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaInputs {
    pub terms: Vec<CgfTerm>,
    pub family: NefFamily,
    pub w: f64,
}

impl SpaInputs {
    pub fn new(terms: Vec<CgfTerm>, family: NefFamily, w: f64) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::Empty("saddlepoint terms"));
        }
        if !w.is_finite() {
            return Err(Error::Domain(format!("threshold must be finite, got {w}")));
        }
        if let Some(t) = terms
            .iter()
            .find(|t| !t.theta.is_finite() || !t.a.is_finite())
        {
            return Err(Error::Domain(format!("non-finite cgf term {t:?}")));
        }
        Ok(Self { terms, family, w })
    }

    /// The same inputs with every `a_i` and `w` negated, whose upper tail is
    /// the lower tail of the original.
    pub fn negated(&self) -> Self {
        Self {
            terms: self
                .terms
                .iter()
                .map(|t| CgfTerm {
                    theta: t.theta,
                    a: -t.a,
                })
                .collect(),
            family: self.family,
            w: -self.w,
        }
    }
}

impl AggregateCgf for SpaInputs {
    fn n(&self) -> usize {
        self.terms.len()
    }

    fn k(&self, s: f64) -> f64 {
        let f = self.family;
        self.terms
            .iter()
            .map(|&t| f.centered_cgf(t, s))
            .sum::<f64>()
            / self.n() as f64
    }

    fn k_prime(&self, s: f64) -> f64 {
        let f = self.family;
        self.terms
            .iter()
            .map(|&t| f.centered_cgf_d1(t, s))
            .sum::<f64>()
            / self.n() as f64
    }

    fn k_second(&self, s: f64) -> f64 {
        let f = self.family;
        self.terms
            .iter()
            .map(|&t| f.centered_cgf_d2(t, s))
            .sum::<f64>()
            / self.n() as f64
    }

    fn k_prime_range(&self) -> (f64, f64) {
        let n = self.n() as f64;
        let (lo, hi) = self
            .terms
            .iter()
            .map(|&t| self.family.centered_cgf_d1_range(t))
            .fold((0.0, 0.0), |(l, h), (a, b)| (l + a, h + b));
        (lo / n, hi / n)
    }
}

/// `K_n(s)`.
pub fn kn(inputs: &SpaInputs, s: f64) -> f64 {
    inputs.k(s)
}

/// `K_n'(s)`.
pub fn kn_prime(inputs: &SpaInputs, s: f64) -> f64 {
    inputs.k_prime(s)
}

/// `K_n''(s)`.
pub fn kn_second(inputs: &SpaInputs, s: f64) -> f64 {
    inputs.k_second(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Interior,
    ZeroThreshold,
    NegativeDiscriminant,
    BracketExhausted,
    NonMonotoneDetected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaSolution {
    pub s_hat: f64,
    pub lambda: f64,
    pub r: f64,
    pub status: SolverStatus,
}

impl SpaSolution {
    fn failed(s_hat: f64, status: SolverStatus) -> Self {
        Self {
            s_hat,
            lambda: f64::NAN,
            r: f64::NAN,
            status,
        }
    }
}

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_EXPAND: u32 = 60;
const INITIAL_BRACKET: f64 = 1.0 / 16.0;
const BISECT_WIDTH: f64 = 1e-6;
const MAX_ITER: usize = 400;

/// Solve `K_n'(s) = w` for the NEF inputs and compute `(λ_n, r_n)`.
pub fn solve_saddlepoint(inputs: &SpaInputs, tol: f64, max_expand: u32) -> Result<SpaSolution> {
    solve(inputs, inputs.w, tol, max_expand)
}

/// Solve `K_n'(s) = w` for an arbitrary aggregate CGF.
///
/// Works on `t = |s|` along the side of `sgn(w)`, where `g(t) = sgn(w)(K_n'(sgn(w) t) − w)`
/// is nondecreasing with `g(0) = −|w|`. The bracket starts at `[0, 1/16]` and is
/// doubled until it straddles the root; bisection narrows it to width `1e−6` and
/// safeguarded Newton steps finish the job.
pub fn solve<C: AggregateCgf + ?Sized>(
    cgf: &C,
    w: f64,
    tol: f64,
    max_expand: u32,
) -> Result<SpaSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    if !w.is_finite() {
        return Err(Error::Domain(format!("threshold must be finite, got {w}")));
    }
    if w == 0.0 {
        return Ok(SpaSolution {
            s_hat: 0.0,
            lambda: 0.0,
            r: 0.0,
            status: SolverStatus::ZeroThreshold,
        });
    }
    let sigma = w.signum();
    let (lo_lim, hi_lim) = cgf.k_prime_range();
    let sup = if sigma > 0.0 { hi_lim } else { -lo_lim };
    if w.abs() >= sup {
        return Ok(SpaSolution::failed(
            f64::NAN,
            SolverStatus::BracketExhausted,
        ));
    }

    let g = |t: f64| sigma * (cgf.k_prime(sigma * t) - w);
    let scale = w.abs().max(1.0);
    let slack = 1e-8 * scale;
    let target = tol * w.abs().clamp(f64::MIN_POSITIVE, 1.0);
    let accept = tol * scale;

    // bracket expansion
    let (mut lo, mut g_lo) = (0.0, -w.abs());
    let mut hi = INITIAL_BRACKET;
    let mut g_hi = g(hi);
    let mut expansions = 0;
    while !(g_hi >= 0.0) {
        if g_hi.is_nan() {
            return Ok(SpaSolution::failed(
                sigma * hi,
                SolverStatus::NonMonotoneDetected,
            ));
        }
        if g_hi < g_lo - slack {
            return Ok(SpaSolution::failed(
                sigma * hi,
                SolverStatus::NonMonotoneDetected,
            ));
        }
        if expansions == max_expand {
            return Ok(SpaSolution::failed(
                sigma * hi,
                SolverStatus::BracketExhausted,
            ));
        }
        lo = hi;
        g_lo = g_hi;
        hi *= 2.0;
        g_hi = g(hi);
        expansions += 1;
    }

    // hybrid bisection / Newton on [lo, hi] with g(lo) < 0 ≤ g(hi)
    let mut t = 0.5 * (lo + hi);
    let mut best = (f64::INFINITY, hi);
    for _ in 0..MAX_ITER {
        let gt = g(t);
        if gt.is_nan() || gt < g_lo - slack || gt > g_hi + slack {
            return Ok(SpaSolution::failed(
                sigma * t,
                SolverStatus::NonMonotoneDetected,
            ));
        }
        if t > 0.0 && gt.abs() < best.0 {
            best = (gt.abs(), t);
        }
        if t > 0.0 && gt.abs() <= target {
            break;
        }
        if gt < 0.0 {
            lo = t;
            g_lo = gt;
        } else {
            hi = t;
            g_hi = gt;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        t = if hi - lo > BISECT_WIDTH * hi {
            mid
        } else {
            let d = cgf.k_second(sigma * t);
            let step = t - gt / d;
            if d > 0.0 && step > lo && step < hi {
                step
            } else {
                mid
            }
        };
    }
    let (resid, t) = best;
    if !(resid <= accept) {
        return Ok(SpaSolution::failed(
            sigma * t,
            SolverStatus::NonMonotoneDetected,
        ));
    }
    Ok(finish(cgf, w, sigma * t))
}

fn finish<C: AggregateCgf + ?Sized>(cgf: &C, w: f64, s_hat: f64) -> SpaSolution {
    let n = cgf.n() as f64;
    let lambda = s_hat * (n * cgf.k_second(s_hat)).max(0.0).sqrt();
    let disc = s_hat * w - cgf.k(s_hat);
    let sgn = s_hat.signum();
    if disc >= 0.0 {
        SpaSolution {
            s_hat,
            lambda,
            r: sgn * (2.0 * n * disc).sqrt(),
            status: SolverStatus::Interior,
        }
    } else {
        SpaSolution {
            s_hat,
            lambda,
            r: sgn,
            status: SolverStatus::NegativeDiscriminant,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailFlag {
    Ok,
    /// Exactly one of `λ`, `r` is zero.
    Undefined,
    /// The formula returned a value outside `[0, 1]`; it is reported unclamped.
    OutOfRange,
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub p: f64,
    pub flag: TailFlag,
}

fn flagged(p: f64) -> TailEstimate {
    let flag = if !p.is_finite() {
        TailFlag::NonFinite
    } else if !(0.0..=1.0).contains(&p) {
        TailFlag::OutOfRange
    } else {
        TailFlag::Ok
    };
    TailEstimate { p, flag }
}

/// `1 − Φ(r) + φ(r)(1/λ − 1/r)`.
pub fn lugannani_rice(lambda: f64, r: f64) -> TailEstimate {
    if !lambda.is_finite() || !r.is_finite() {
        return TailEstimate {
            p: f64::NAN,
            flag: TailFlag::NonFinite,
        };
    }
    match (lambda == 0.0, r == 0.0) {
        (true, true) => {
            return TailEstimate {
                p: 0.5,
                flag: TailFlag::Ok,
            }
        }
        (true, false) | (false, true) => {
            return TailEstimate {
                p: f64::NAN,
                flag: TailFlag::Undefined,
            }
        }
        _ => {}
    }
    if lambda == r {
        return flagged(normal::sf(r));
    }
    flagged(normal::sf(r) + normal::pdf(r) * (1.0 / lambda - 1.0 / r))
}

/// `exp((λ² − r²)/2)(1 − Φ(λ))`.
pub fn robinson(lambda: f64, r: f64) -> TailEstimate {
    if !lambda.is_finite() || !r.is_finite() {
        return TailEstimate {
            p: f64::NAN,
            flag: TailFlag::NonFinite,
        };
    }
    let log_p = 0.5 * (lambda - r) * (lambda + r) + normal::sf(lambda).ln();
    flagged(log_p.exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailFormula {
    #[default]
    LugannaniRice,
    Robinson,
}

impl TailFormula {
    pub fn evaluate(self, lambda: f64, r: f64) -> TailEstimate {
        match self {
            TailFormula::LugannaniRice => lugannani_rice(lambda, r),
            TailFormula::Robinson => robinson(lambda, r),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaTail {
    pub p: f64,
    pub solution: SpaSolution,
    pub flag: TailFlag,
}

impl SpaTail {
    /// Whether the estimate can be reported without a fallback.
    pub fn is_usable(&self) -> bool {
        matches!(
            self.solution.status,
            SolverStatus::Interior | SolverStatus::ZeroThreshold
        ) && self.flag == TailFlag::Ok
    }
}

/// Estimate `P[(1/n) Σ W_i ≥ w | data]` by Lugannani-Rice.
pub fn spa_tail_probability(inputs: &SpaInputs) -> Result<SpaTail> {
    tail_with(inputs, inputs.w, DEFAULT_TOL, TailFormula::LugannaniRice)
}

/// Solve and evaluate the chosen tail formula for any aggregate CGF.
pub fn tail_with<C: AggregateCgf + ?Sized>(
    cgf: &C,
    w: f64,
    tol: f64,
    formula: TailFormula,
) -> Result<SpaTail> {
    let solution = solve(cgf, w, tol, DEFAULT_MAX_EXPAND)?;
    let est = match solution.status {
        SolverStatus::BracketExhausted | SolverStatus::NonMonotoneDetected => TailEstimate {
            p: f64::NAN,
            flag: TailFlag::NonFinite,
        },
        _ => formula.evaluate(solution.lambda, solution.r),
    };
    Ok(SpaTail {
        p: est.p,
        solution,
        flag: est.flag,
    })
}
