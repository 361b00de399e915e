//! Multinomial hidden Markov model over sequences `x ∈ {0,…,M−1}^p`.
//!
//! A latent chain `U_1 → … → U_p` on `K` states starts from `q` and moves by a
//! row-stochastic transition matrix; each site emits `X_j` from row `U_j` of the
//! emission matrix. Sites are indexed from 0.
//!
//! Single-site conditionals `P(X_j = v | X_{−j})` combine the forward prediction
//! `A_j(u) ∝ P(U_j = u, x_{<j})` and the backward likelihood
//! `B_j(u) ∝ P(x_{>j} | U_j = u)`. Both recursions are rescaled to unit sum at
//! every site and the logarithms of the scale factors are accumulated.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Transitions {
    /// One matrix for every gap.
    Homogeneous(DMatrix<f64>),
    /// Matrix `j` drives the gap from site `j` to site `j + 1`.
    PerGap(Vec<DMatrix<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hmm {
    initial: Vec<f64>,
    transitions: Transitions,
    /// `K × M`, row `u` is the law of `X_j` given `U_j = u`.
    emission: DMatrix<f64>,
    n_sites: usize,
}

fn check_distribution(row: impl Iterator<Item = f64>, what: &str) -> Result<()> {
    let mut sum = 0.0;
    for v in row {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::InvalidParameter(format!("{what} has entry {v}")));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::InvalidParameter(format!(
            "{what} sums to {sum}, not 1"
        )));
    }
    Ok(())
}

fn check_stochastic(m: &DMatrix<f64>, rows: usize, cols: usize, what: &str) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::InvalidParameter(format!(
            "{what} is {}×{}, expected {rows}×{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    for (i, r) in m.row_iter().enumerate() {
        check_distribution(r.iter().copied(), &format!("{what} row {i}"))?;
    }
    Ok(())
}

fn cumulative(row: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    row.map(|v| {
        acc += v;
        acc
    })
    .collect()
}

fn draw<R: Rng + ?Sized>(cdf: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * cdf[cdf.len() - 1];
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

fn normalize(v: &mut [f64]) -> f64 {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
    s
}

/// Rescaled forward and backward tables for one sequence.
struct Tables {
    /// `A_j`, the prediction of `U_j` from `x_{<j}`, rescaled to unit sum.
    alpha: Vec<Vec<f64>>,
    /// `B_j` rescaled to unit sum.
    beta: Vec<Vec<f64>>,
    /// `Σ log P(x_j | x_{<j})`, or −∞ once a zero-probability prefix is hit.
    forward_log_lik: f64,
    /// `log P(x)` accumulated from the backward pass.
    backward_log_lik: f64,
}

impl Hmm {
    /// Homogeneous chain with shared emission.
    pub fn new(
        initial: Vec<f64>,
        transition: DMatrix<f64>,
        emission: DMatrix<f64>,
        n_sites: usize,
    ) -> Result<Self> {
        Self::build(
            initial,
            Transitions::Homogeneous(transition),
            emission,
            n_sites,
        )
    }

    /// Chain with one transition matrix per gap (`n_sites − 1` of them).
    pub fn with_site_transitions(
        initial: Vec<f64>,
        transitions: Vec<DMatrix<f64>>,
        emission: DMatrix<f64>,
    ) -> Result<Self> {
        let n_sites = transitions.len() + 1;
        Self::build(initial, Transitions::PerGap(transitions), emission, n_sites)
    }

    fn build(
        initial: Vec<f64>,
        transitions: Transitions,
        emission: DMatrix<f64>,
        n_sites: usize,
    ) -> Result<Self> {
        let k = initial.len();
        if k == 0 || n_sites == 0 || emission.ncols() == 0 {
            return Err(Error::InvalidParameter(
                "hmm needs at least one state, site and symbol".into(),
            ));
        }
        check_distribution(initial.iter().copied(), "initial distribution")?;
        match &transitions {
            Transitions::Homogeneous(q) => check_stochastic(q, k, k, "transition matrix")?,
            Transitions::PerGap(qs) => {
                for (j, q) in qs.iter().enumerate() {
                    check_stochastic(q, k, k, &format!("transition matrix {j}"))?;
                }
            }
        }
        check_stochastic(&emission, k, emission.ncols(), "emission matrix")?;
        Ok(Self {
            initial,
            transitions,
            emission,
            n_sites,
        })
    }

    pub fn n_states(&self) -> usize {
        self.initial.len()
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn n_symbols(&self) -> usize {
        self.emission.ncols()
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn emission(&self) -> &DMatrix<f64> {
        &self.emission
    }

    /// Transition matrix for the gap between sites `gap` and `gap + 1`.
    pub fn transition(&self, gap: usize) -> &DMatrix<f64> {
        match &self.transitions {
            Transitions::Homogeneous(q) => q,
            Transitions::PerGap(qs) => &qs[gap],
        }
    }

    /// `n` independent sequences, one per row.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<usize>> {
        let init = cumulative(self.initial.iter().copied());
        let emit: Vec<Vec<f64>> = self
            .emission
            .row_iter()
            .map(|r| cumulative(r.iter().copied()))
            .collect();
        let cdf_rows = |q: &DMatrix<f64>| -> Vec<Vec<f64>> {
            q.row_iter()
                .map(|r| cumulative(r.iter().copied()))
                .collect()
        };
        let trans: Vec<Vec<Vec<f64>>> = match &self.transitions {
            Transitions::Homogeneous(q) => vec![cdf_rows(q)],
            Transitions::PerGap(qs) => qs.iter().map(cdf_rows).collect(),
        };
        (0..n)
            .map(|_| {
                let mut u = draw(&init, rng);
                let mut seq = Vec::with_capacity(self.n_sites);
                for j in 0..self.n_sites {
                    if j > 0 {
                        let g = if trans.len() == 1 { 0 } else { j - 1 };
                        u = draw(&trans[g][u], rng);
                    }
                    seq.push(draw(&emit[u], rng));
                }
                seq
            })
            .collect()
    }

    fn check_sequence(&self, x: &[usize]) -> Result<()> {
        if x.len() != self.n_sites {
            return Err(Error::DimensionMismatch {
                expected: self.n_sites,
                found: x.len(),
            });
        }
        if let Some(&v) = x.iter().find(|&&v| v >= self.n_symbols()) {
            return Err(Error::Domain(format!(
                "symbol {v} outside alphabet of size {}",
                self.n_symbols()
            )));
        }
        Ok(())
    }

    fn tables(&self, x: &[usize]) -> Tables {
        let (k, p) = (self.n_states(), self.n_sites);
        let mut alpha = vec![vec![0.0; k]; p];
        let mut beta = vec![vec![0.0; k]; p];

        alpha[0].copy_from_slice(&self.initial);
        let mut forward_log_lik = 0.0;
        let mut filt = vec![0.0; k];
        for j in 0..p {
            for u in 0..k {
                filt[u] = alpha[j][u] * self.emission[(u, x[j])];
            }
            let c = normalize(&mut filt);
            forward_log_lik += c.ln();
            if j + 1 < p {
                let q = self.transition(j);
                let next = &mut alpha[j + 1];
                for (u, &f) in filt.iter().enumerate() {
                    if f != 0.0 {
                        for v in 0..k {
                            next[v] += f * q[(u, v)];
                        }
                    }
                }
            }
        }

        beta[p - 1].iter_mut().for_each(|b| *b = 1.0 / k as f64);
        let mut backward_log_scale = (k as f64).ln();
        let mut tmp = vec![0.0; k];
        for j in (0..p.saturating_sub(1)).rev() {
            for v in 0..k {
                tmp[v] = self.emission[(v, x[j + 1])] * beta[j + 1][v];
            }
            let q = self.transition(j);
            for u in 0..k {
                beta[j][u] = (0..k).map(|v| q[(u, v)] * tmp[v]).sum();
            }
            backward_log_scale += normalize(&mut beta[j]).ln();
        }
        let head: f64 = (0..k)
            .map(|u| self.initial[u] * self.emission[(u, x[0])] * beta[0][u])
            .sum();
        Tables {
            alpha,
            beta,
            forward_log_lik,
            backward_log_lik: head.ln() + backward_log_scale,
        }
    }

    fn site_from_tables(&self, t: &Tables, j: usize) -> Result<SiteConditional> {
        let mut probs = vec![0.0; self.n_symbols()];
        for u in 0..self.n_states() {
            let w = t.alpha[j][u] * t.beta[j][u];
            if w != 0.0 {
                for (v, p) in probs.iter_mut().enumerate() {
                    *p += w * self.emission[(u, v)];
                }
            }
        }
        let s = normalize(&mut probs);
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::ZeroSupport { site: j });
        }
        Ok(SiteConditional { site: j, probs })
    }

    /// `log P(X = x)` from the forward pass.
    pub fn log_likelihood(&self, x: &[usize]) -> Result<f64> {
        self.check_sequence(x)?;
        Ok(self.tables(x).forward_log_lik)
    }

    /// `log P(X = x)` from the forward and the backward pass.
    pub fn log_likelihood_both(&self, x: &[usize]) -> Result<(f64, f64)> {
        self.check_sequence(x)?;
        let t = self.tables(x);
        Ok((t.forward_log_lik, t.backward_log_lik))
    }

    /// Law of `X_j` given the other sites of `x`.
    pub fn conditional_site_law(&self, x: &[usize], j: usize) -> Result<SiteConditional> {
        self.check_sequence(x)?;
        self.check_site(j)?;
        self.site_from_tables(&self.tables(x), j)
    }

    /// Conditionals at every site from a single forward and backward pass.
    pub fn all_site_laws(&self, x: &[usize]) -> Result<Vec<SiteConditional>> {
        self.check_sequence(x)?;
        let t = self.tables(x);
        (0..self.n_sites)
            .map(|j| self.site_from_tables(&t, j))
            .collect()
    }

    pub fn conditional_mean(&self, x: &[usize], j: usize) -> Result<f64> {
        Ok(self.conditional_site_law(x, j)?.mean())
    }

    pub fn conditional_ccgf(&self, x: &[usize], j: usize, t: f64, order: u8) -> Result<f64> {
        self.conditional_site_law(x, j)?.ccgf(t, order)
    }

    fn check_site(&self, j: usize) -> Result<()> {
        if j >= self.n_sites {
            return Err(Error::InvalidParameter(format!(
                "site {j} out of range for {} sites",
                self.n_sites
            )));
        }
        Ok(())
    }
}

/// `P(X_j = v | X_{−j})` for `v = 0, …, M−1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteConditional {
    pub site: usize,
    pub probs: Vec<f64>,
}

impl SiteConditional {
    pub fn mean(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(v, p)| v as f64 * p)
            .sum()
    }

    /// Order 0, 1 or 2 derivative of `t ↦ log Σ_v e^{tv} p_v`.
    pub fn ccgf(&self, t: f64, order: u8) -> Result<f64> {
        if !t.is_finite() {
            return Err(Error::Domain(format!(
                "ccgf argument must be finite, got {t}"
            )));
        }
        let support: Vec<(f64, f64)> = self
            .probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(v, &p)| (v as f64, p.ln() + t * v as f64))
            .collect();
        let top = support
            .iter()
            .map(|s| s.1)
            .fold(f64::NEG_INFINITY, f64::max);
        let (mut d, mut d1, mut d2) = (0.0, 0.0, 0.0);
        for &(v, lw) in &support {
            let w = (lw - top).exp();
            d += w;
            d1 += v * w;
            d2 += v * v * w;
        }
        let m = d1 / d;
        match order {
            0 => Ok(top + d.ln()),
            1 => Ok(m),
            2 => Ok((d2 / d - m * m).max(0.0)),
            _ => Err(Error::InvalidParameter(format!(
                "ccgf order must be 0, 1 or 2, got {order}"
            ))),
        }
    }
}

/// Leave-one-site-out regression by the tower identity:
/// `Σ_v f(x with x_j = v) · P(X_j = v | x_{−j})` for every row.
///
/// `conditionals[i]` must be the site-`j` law for row `i`.
pub fn tower_mu_y<F>(
    x: &[Vec<usize>],
    j: usize,
    f_hat: F,
    conditionals: &[SiteConditional],
) -> Result<Vec<f64>>
where
    F: Fn(&[usize]) -> f64,
{
    if x.len() != conditionals.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: conditionals.len(),
        });
    }
    let mut buf = Vec::new();
    x.iter()
        .zip(conditionals)
        .map(|(row, c)| {
            if c.site != j || j >= row.len() {
                return Err(Error::InvalidParameter(format!(
                    "conditional for site {} used at site {j}",
                    c.site
                )));
            }
            buf.clear();
            buf.extend_from_slice(row);
            // centering on the value at symbol 0 keeps constants exact
            buf[j] = 0;
            let base = f_hat(&buf);
            let mut acc = 0.0;
            for (v, &p) in c.probs.iter().enumerate().skip(1) {
                if p != 0.0 {
                    buf[j] = v;
                    acc += p * (f_hat(&buf) - base);
                }
            }
            Ok(base + acc)
        })
        .collect()
}

/// Random models with an upper-bidiagonal chain (stay with probability γ,
/// otherwise advance one state; the last state absorbs), uniform start and
/// `P(X_j = 1 | U_j = k) ~ Beta(α, β)` drawn once per state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmmGenerator {
    pub n_states: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for HmmGenerator {
    fn default() -> Self {
        Self {
            n_states: 10,
            gamma: 0.9,
            alpha: 1.0,
            beta: 3.0,
        }
    }
}

impl HmmGenerator {
    pub fn transition_matrix(&self) -> DMatrix<f64> {
        let k = self.n_states;
        DMatrix::from_fn(k, k, |i, j| {
            if i + 1 == k {
                (j == i) as u8 as f64
            } else if j == i {
                self.gamma
            } else if j == i + 1 {
                1.0 - self.gamma
            } else {
                0.0
            }
        })
    }

    pub fn generate<R: Rng + ?Sized>(&self, n_sites: usize, rng: &mut R) -> Result<Hmm> {
        if self.n_states == 0 || !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidParameter(format!(
                "invalid chain spec {self:?}"
            )));
        }
        let prior = Beta::new(self.alpha, self.beta)
            .map_err(|e| Error::InvalidParameter(format!("emission prior: {e}")))?;
        let k = self.n_states;
        let ones: Vec<f64> = (0..k).map(|_| prior.sample(rng)).collect();
        let emission = DMatrix::from_fn(k, 2, |u, v| if v == 1 { ones[u] } else { 1.0 - ones[u] });
        Hmm::new(
            vec![1.0 / k as f64; k],
            self.transition_matrix(),
            emission,
            n_sites,
        )
    }
}
