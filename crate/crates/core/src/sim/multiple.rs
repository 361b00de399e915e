use crate::error::{check_len, Error, Result};
use serde::{Deserialize, Serialize};

fn check_pvalues(p: &[f64]) -> Result<()> {
    match p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(v) => Err(Error::Domain(format!("p-value {v} outside [0, 1]"))),
        None => Ok(()),
    }
}

fn check_level(level: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&level) {
        return Err(Error::InvalidParameter(format!(
            "level {level} outside [0, 1]"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BhResult {
    pub rejected: Vec<bool>,
    /// `min(1, min_{k ≥ rank} m p_(k) / k)`.
    pub adjusted: Vec<f64>,
}

impl BhResult {
    pub fn n_rejected(&self) -> usize {
        self.rejected.iter().filter(|&&r| r).count()
    }
}

/// Benjamini-Hochberg step-up at level `q`: with sorted p-values, reject the
/// `k` smallest where `k` is the largest rank with `p_(k) ≤ k q / m`.
pub fn bh_adjust(p: &[f64], q: f64) -> Result<BhResult> {
    check_pvalues(p)?;
    check_level(q)?;
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));

    let mf = m as f64;
    let cutoff = (1..=m)
        .rev()
        .find(|&k| p[order[k - 1]] <= k as f64 * q / mf)
        .unwrap_or(0);
    let mut rejected = vec![false; m];
    for &i in &order[..cutoff] {
        rejected[i] = true;
    }

    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for k in (1..=m).rev() {
        let i = order[k - 1];
        running = running.min(mf * p[i] / k as f64);
        adjusted[i] = running;
    }
    Ok(BhResult { rejected, adjusted })
}

/// Reject `p_i ≤ α / m`.
pub fn bonferroni_adjust(p: &[f64], alpha: f64) -> Result<Vec<bool>> {
    check_pvalues(p)?;
    check_level(alpha)?;
    let threshold = alpha / p.len().max(1) as f64;
    Ok(p.iter().map(|&v| v <= threshold).collect())
}

/// `#{i : x_i y_i > 0}`.
pub fn effective_sample_size(x: &[f64], y: &[f64]) -> Result<usize> {
    check_len(x.len(), y.len())?;
    Ok(x.iter().zip(y).filter(|(a, b)| *a * *b > 0.0).count())
}

/// False discovery proportion, 0 when nothing is rejected.
pub fn false_discovery_proportion(rejected: &[bool], is_signal: &[bool]) -> Result<f64> {
    check_len(rejected.len(), is_signal.len())?;
    let r = rejected.iter().filter(|&&v| v).count();
    if r == 0 {
        return Ok(0.0);
    }
    let false_hits = rejected
        .iter()
        .zip(is_signal)
        .filter(|(r, s)| **r && !**s)
        .count();
    Ok(false_hits as f64 / r as f64)
}

/// Fraction of signals rejected, 0 when there are none.
pub fn true_positive_proportion(rejected: &[bool], is_signal: &[bool]) -> Result<f64> {
    check_len(rejected.len(), is_signal.len())?;
    let s = is_signal.iter().filter(|&&v| v).count();
    if s == 0 {
        return Ok(0.0);
    }
    let hits = rejected
        .iter()
        .zip(is_signal)
        .filter(|(r, s)| **r && **s)
        .count();
    Ok(hits as f64 / s as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bh_hand_cases() {
        let r = bh_adjust(&[0.001, 0.012, 0.03, 0.04, 0.9], 0.05).unwrap();
        assert_eq!(r.rejected, vec![true, true, true, true, false]);
        assert!(bh_adjust(&[1.0; 6], 0.05)
            .unwrap()
            .rejected
            .iter()
            .all(|r| !r));
        assert_eq!(bh_adjust(&[0.05], 0.05).unwrap().rejected, vec![true]);
        assert_eq!(bh_adjust(&[0.0501], 0.05).unwrap().rejected, vec![false]);
        // step-up rescues a smaller p-value that fails its own threshold
        let r = bh_adjust(&[0.03, 0.031], 0.05).unwrap();
        assert_eq!(r.rejected, vec![true, true]);
        assert!((r.adjusted[0] - 0.031).abs() < 1e-15);
        assert!(bh_adjust(&[1.2], 0.05).is_err());
        assert!(bh_adjust(&[], 0.05).unwrap().rejected.is_empty());
    }

    #[test]
    fn bonferroni_hand_cases() {
        assert_eq!(bonferroni_adjust(&[0.04], 0.05).unwrap(), vec![true]);
        assert_eq!(
            bonferroni_adjust(&[0.004, 0.2], 0.01).unwrap(),
            vec![true, false]
        );
        assert!(bonferroni_adjust(&[0.0; 5], 0.05)
            .unwrap()
            .iter()
            .all(|&r| r));
    }

    #[test]
    fn ess_hand_cases() {
        assert_eq!(
            effective_sample_size(&[1.0, 0.0, 1.0], &[2.0, 3.0, 0.0]).unwrap(),
            1
        );
        assert_eq!(effective_sample_size(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0);
        assert_eq!(effective_sample_size(&[1.0; 4], &[1.0; 4]).unwrap(), 4);
        assert!(effective_sample_size(&[1.0], &[]).is_err());
    }

    #[test]
    fn fdp_and_power() {
        let rej = [true, true, false, true];
        let sig = [true, false, true, true];
        assert!((false_discovery_proportion(&rej, &sig).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((true_positive_proportion(&rej, &sig).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(false_discovery_proportion(&[false; 4], &sig).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn bh_monotone_and_contains_bonferroni(p in prop::collection::vec(0.0f64..=1.0, 1..40), q1 in 0.0f64..0.3, dq in 0.0f64..0.3) {
            let a = bh_adjust(&p, q1).unwrap();
            let b = bh_adjust(&p, q1 + dq).unwrap();
            for i in 0..p.len() {
                prop_assert!(!a.rejected[i] || b.rejected[i]);
                prop_assert_eq!(a.rejected[i], a.adjusted[i] <= q1);
            }
            let bon = bonferroni_adjust(&p, q1).unwrap();
            for (b, r) in bon.iter().zip(&a.rejected) {
                prop_assert!(!b || *r);
            }
        }
    }
}
