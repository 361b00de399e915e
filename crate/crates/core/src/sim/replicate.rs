use super::generate::{simulate_crispr, simulate_gwas, CrisprParams, GwasParams};
use super::multiple::{bh_adjust, false_discovery_proportion, true_positive_proportion};
use crate::citest::{
    dcrt, fit_conditionals, gcm, score_test_nb, spacrt, Dataset, FittedConditionals, Method, Side,
    TestOutcome, XModel, YModel,
};
use crate::error::{Error, Result};
use crate::glm::{cv_lasso, CvConfig, CvRule, GlmFamily, IrlsControl, Penalty, SizeSpec};
use crate::nef::{expit, NefFamily};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

const SIDES: [Side; 3] = [Side::Left, Side::Right, Side::Two];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scenario {
    /// One hypothesis per replicate.
    Crispr { params: CrisprParams },
    /// `d` hypotheses per replicate; `Y | X` by cross-validated lasso and the
    /// tower identity, `X_j | X_{−j}` from the true HMM.
    Gwas { params: GwasParams, rule: CvRule },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationConfig {
    pub methods: Vec<Method>,
    pub n_reps: usize,
    pub alphas: Vec<f64>,
    pub seed: u64,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
    pub dcrt_resamples: usize,
}

impl Default for ReplicationConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::SpaCrt, Method::Dcrt, Method::Gcm, Method::ScoreNb],
            n_reps: 2000,
            alphas: vec![0.005, 0.05],
            seed: 1,
            threads: None,
            dcrt_resamples: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRecord {
    pub method: Method,
    pub hypothesis: usize,
    pub statistic: f64,
    pub p_left: f64,
    pub p_right: f64,
    pub p_two: f64,
    pub fallback_used: bool,
    pub elapsed_secs: f64,
}

impl MethodRecord {
    fn from_outcome(hypothesis: usize, o: &TestOutcome) -> Self {
        Self {
            method: o.method,
            hypothesis,
            statistic: o.statistic,
            p_left: o.p_left,
            p_right: o.p_right,
            p_two: o.p_two,
            fallback_used: o.fallback_used,
            elapsed_secs: o.elapsed.as_secs_f64(),
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub index: usize,
    pub seed: u64,
    pub records: Vec<MethodRecord>,
    /// Hypotheses with a true signal (GWAS only).
    pub signals: Vec<usize>,
    pub n_hypotheses: usize,
    /// Effective sample size of the first hypothesis' data.
    pub effective_sample_size: usize,
    pub fit_secs: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionSummary {
    pub method: Method,
    pub side: Side,
    pub alpha: f64,
    pub rejections: usize,
    pub total: usize,
    pub rate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdrSummary {
    pub method: Method,
    pub q: f64,
    pub mean_fdp: f64,
    pub fdp_se: f64,
    pub mean_power: f64,
    pub power_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub records: usize,
    pub fallback_rate: f64,
    pub mean_elapsed_secs: f64,
    pub sd_elapsed_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub scenario: Scenario,
    pub config: ReplicationConfig,
    pub replicates: Vec<ReplicateRecord>,
    pub failures: usize,
    pub rejections: Vec<RejectionSummary>,
    pub fdr: Vec<FdrSummary>,
    pub methods: Vec<MethodSummary>,
}

impl ReplicationReport {
    /// All p-values of `method` on `side`, in replicate then hypothesis order.
    pub fn p_values(&self, method: Method, side: Side) -> Vec<f64> {
        self.records(method).map(|r| r.p_value(side)).collect()
    }

    fn records(&self, method: Method) -> impl Iterator<Item = &MethodRecord> {
        self.replicates
            .iter()
            .flat_map(|r| r.records.iter())
            .filter(move |r| r.method == method)
    }

    pub fn rejection(&self, method: Method, side: Side, alpha: f64) -> Option<&RejectionSummary> {
        self.rejections
            .iter()
            .find(|r| r.method == method && r.side == side && r.alpha == alpha)
    }

    pub fn method_summary(&self, method: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method)
    }

    /// Zero every wall-clock field so that reruns compare equal.
    pub fn strip_timing(&mut self) {
        for rep in &mut self.replicates {
            rep.fit_secs = 0.0;
            rep.records.iter_mut().for_each(|r| r.elapsed_secs = 0.0);
        }
        for m in &mut self.methods {
            m.mean_elapsed_secs = 0.0;
            m.sd_elapsed_secs = 0.0;
        }
    }
}

/// Seed of replicate `index`.
pub fn replicate_seed(master: u64, index: usize) -> u64 {
    master ^ index as u64
}

fn validate(scenario: &Scenario, config: &ReplicationConfig) -> Result<()> {
    if config.methods.is_empty() {
        return Err(Error::InvalidParameter("no methods requested".into()));
    }
    if config.methods.contains(&Method::Dcrt) && config.dcrt_resamples == 0 {
        return Err(Error::InvalidParameter(
            "dcrt needs at least one resample".into(),
        ));
    }
    if let Some(a) = config.alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        return Err(Error::InvalidParameter(format!("alpha {a} outside (0, 1)")));
    }
    let unsupported: &[Method] = match scenario {
        Scenario::Crispr { params } => {
            params.validate()?;
            &[Method::SignFlipSpa]
        }
        Scenario::Gwas { .. } => &[Method::SignFlipSpa, Method::ScoreNb],
    };
    if let Some(m) = config.methods.iter().find(|m| unsupported.contains(m)) {
        return Err(Error::InvalidParameter(format!(
            "method {m} is not available in this scenario"
        )));
    }
    Ok(())
}

fn run_methods(
    hypothesis: usize,
    data: &Dataset,
    fits: &FittedConditionals,
    config: &ReplicationConfig,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<MethodRecord>,
) -> Result<()> {
    for &m in &config.methods {
        let o = match m {
            Method::SpaCrt => spacrt(data, fits)?,
            Method::Dcrt => dcrt(data, fits, config.dcrt_resamples, rng)?,
            Method::Gcm => gcm(data, fits)?,
            Method::ScoreNb => score_test_nb(data)?,
            Method::SignFlipSpa => unreachable!("rejected by validation"),
        };
        out.push(MethodRecord::from_outcome(hypothesis, &o));
    }
    Ok(())
}

fn crispr_replicate(
    params: &CrisprParams,
    config: &ReplicationConfig,
    seed: u64,
    rep: &mut ReplicateRecord,
) -> Result<()> {
    let mut data_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_rng = ChaCha8Rng::seed_from_u64(seed);
    test_rng.set_stream(1);
    let data = simulate_crispr(params, &mut data_rng)?;
    rep.n_hypotheses = 1;
    rep.effective_sample_size = super::effective_sample_size(data.x.as_slice(), data.y.as_slice())?;
    let start = Instant::now();
    let needs_fits = config.methods.iter().any(|m| *m != Method::ScoreNb);
    let fits = if needs_fits {
        let report = fit_conditionals(
            &data,
            &XModel::Logistic {
                penalty: Penalty::None,
            },
            &YModel::NegBin {
                size: SizeSpec::Mom,
            },
        )?;
        Some(report.fits)
    } else {
        None
    };
    rep.fit_secs = start.elapsed().as_secs_f64();
    match fits {
        Some(f) => run_methods(0, &data, &f, config, &mut test_rng, &mut rep.records),
        None => {
            let o = score_test_nb(&data)?;
            rep.records.push(MethodRecord::from_outcome(0, &o));
            Ok(())
        }
    }
}

fn gwas_replicate(
    params: &GwasParams,
    rule: CvRule,
    config: &ReplicationConfig,
    seed: u64,
    rep: &mut ReplicateRecord,
) -> Result<()> {
    let mut data_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_rng = ChaCha8Rng::seed_from_u64(seed);
    test_rng.set_stream(1);
    let g = simulate_gwas(params, &mut data_rng)?;
    let (n, d) = (params.n, params.d);
    rep.signals = g.signals();
    rep.n_hypotheses = d;

    let start = Instant::now();
    let cv = cv_lasso(
        &g.x,
        &g.y,
        GlmFamily::Logistic,
        &CvConfig {
            seed,
            ..CvConfig::default()
        },
        &IrlsControl::default(),
    )?;
    let coef = &cv.fit(rule).coefficients;
    let eta: Vec<f64> = (0..n)
        .map(|i| coef[0] + (0..d).map(|j| coef[j + 1] * g.x[(i, j)]).sum::<f64>())
        .collect();
    // P(X_ij = 1 | X_i,−j) for every row and site
    let mut mu_x = DMatrix::zeros(n, d);
    for (i, seq) in g.sequences.iter().enumerate() {
        for law in g.hmm.all_site_laws(seq)? {
            mu_x[(i, law.site)] = law.probs.get(1).copied().unwrap_or(0.0);
        }
    }
    rep.fit_secs = start.elapsed().as_secs_f64();

    let z = DMatrix::zeros(n, 0);
    for j in 0..d {
        let bj = coef[j + 1];
        let xj = g.x.column(j).clone_owned();
        // tower identity with the fitted logistic mean: Σ_v expit(η with x_j = v) P(v | x_−j)
        let mu_y = DVector::from_fn(n, |i, _| {
            let base = eta[i] - bj * xj[i];
            let m = mu_x[(i, j)];
            (1.0 - m) * expit(base) + m * expit(base + bj)
        });
        if j == 0 {
            rep.effective_sample_size =
                super::effective_sample_size(xj.as_slice(), g.y.as_slice())?;
        }
        let data = Dataset::new(xj, g.y.clone(), z.clone())?;
        let fits = FittedConditionals::from_means(
            mu_x.column(j).clone_owned(),
            mu_y,
            NefFamily::Bernoulli,
        )?;
        run_methods(j, &data, &fits, config, &mut test_rng, &mut rep.records)?;
    }
    Ok(())
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

fn summarize(
    scenario: Scenario,
    config: ReplicationConfig,
    replicates: Vec<ReplicateRecord>,
) -> Result<ReplicationReport> {
    let failures = replicates.iter().filter(|r| r.error.is_some()).count();
    let gwas = matches!(scenario, Scenario::Gwas { .. });
    let (mut rejections, mut fdr, mut methods) = (vec![], vec![], vec![]);
    for &method in &config.methods {
        let recs: Vec<&MethodRecord> = replicates
            .iter()
            .flat_map(|r| r.records.iter())
            .filter(|r| r.method == method)
            .collect();
        let total = recs.len();
        for &side in &SIDES {
            for &alpha in &config.alphas {
                let count = recs.iter().filter(|r| r.p_value(side) <= alpha).count();
                let rate = if total > 0 {
                    count as f64 / total as f64
                } else {
                    f64::NAN
                };
                let se = (rate * (1.0 - rate) / total as f64).sqrt();
                rejections.push(RejectionSummary {
                    method,
                    side,
                    alpha,
                    rejections: count,
                    total,
                    rate,
                    se,
                });
            }
        }
        let times: Vec<f64> = recs.iter().map(|r| r.elapsed_secs).collect();
        let (mean_elapsed_secs, sd_elapsed_secs) = mean_sd(&times);
        let fallback_rate =
            recs.iter().filter(|r| r.fallback_used).count() as f64 / total.max(1) as f64;
        methods.push(MethodSummary {
            method,
            records: total,
            fallback_rate,
            mean_elapsed_secs,
            sd_elapsed_secs,
        });

        if gwas {
            for &q in &config.alphas {
                let (mut fdps, mut powers) = (vec![], vec![]);
                for rep in replicates.iter().filter(|r| r.error.is_none()) {
                    let p: Vec<f64> = rep
                        .records
                        .iter()
                        .filter(|r| r.method == method)
                        .map(|r| r.p_two)
                        .collect();
                    let mut is_signal = vec![false; rep.n_hypotheses];
                    rep.signals.iter().for_each(|&j| is_signal[j] = true);
                    let bh = bh_adjust(&p, q)?;
                    fdps.push(false_discovery_proportion(&bh.rejected, &is_signal)?);
                    powers.push(true_positive_proportion(&bh.rejected, &is_signal)?);
                }
                let k = fdps.len().max(1) as f64;
                let (mean_fdp, sd_fdp) = mean_sd(&fdps);
                let (mean_power, sd_power) = mean_sd(&powers);
                fdr.push(FdrSummary {
                    method,
                    q,
                    mean_fdp,
                    fdp_se: sd_fdp / k.sqrt(),
                    mean_power,
                    power_se: sd_power / k.sqrt(),
                });
            }
        }
    }
    Ok(ReplicationReport {
        scenario,
        config,
        replicates,
        failures,
        rejections,
        fdr,
        methods,
    })
}

/// Run `n_reps` independent replicates of `scenario`. Replicate `i` draws its
/// data from `ChaCha8(seed ⊕ i)` stream 0 and its resamples from stream 1.
/// A failing replicate is recorded with its error message and excluded from
/// the summaries.
pub fn run_replications(
    scenario: &Scenario,
    config: &ReplicationConfig,
) -> Result<ReplicationReport> {
    validate(scenario, config)?;
    let one = |index: usize| {
        let seed = replicate_seed(config.seed, index);
        let mut rep = ReplicateRecord {
            index,
            seed,
            records: vec![],
            signals: vec![],
            n_hypotheses: 0,
            effective_sample_size: 0,
            fit_secs: 0.0,
            error: None,
        };
        let res = match scenario {
            Scenario::Crispr { params } => crispr_replicate(params, config, seed, &mut rep),
            Scenario::Gwas { params, rule } => {
                gwas_replicate(params, *rule, config, seed, &mut rep)
            }
        };
        if let Err(e) = res {
            rep.records.clear();
            rep.error = Some(e.to_string());
        }
        rep
    };
    let run = || {
        (0..config.n_reps)
            .into_par_iter()
            .map(one)
            .collect::<Vec<_>>()
    };
    let replicates = match config.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };
    summarize(scenario.clone(), config.clone(), replicates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::HmmGenerator;

    fn small_config(methods: Vec<Method>, n_reps: usize) -> ReplicationConfig {
        ReplicationConfig {
            methods,
            n_reps,
            alphas: vec![0.05, 0.2],
            seed: 17,
            threads: Some(1),
            dcrt_resamples: 200,
        }
    }

    fn null_crispr() -> Scenario {
        Scenario::Crispr {
            params: CrisprParams {
                gamma0: -2.0,
                beta0: -1.0,
                rho: 0.0,
                size: 1.0,
                n: 300,
            },
        }
    }

    #[test]
    fn bookkeeping_and_determinism() {
        let config = small_config(vec![Method::SpaCrt, Method::Dcrt], 50);
        let mut a = run_replications(&null_crispr(), &config).unwrap();
        let mut b = run_replications(&null_crispr(), &config).unwrap();
        for side in SIDES {
            assert_eq!(a.p_values(Method::SpaCrt, side).len(), 50);
            assert_eq!(a.p_values(Method::Dcrt, side).len(), 50);
        }
        assert!(a
            .p_values(Method::Dcrt, Side::Two)
            .iter()
            .all(|p| (0.0..=1.0).contains(p)));
        a.strip_timing();
        b.strip_timing();
        assert_eq!(a, b);
        let r = a.rejection(Method::SpaCrt, Side::Right, 0.05).unwrap();
        assert_eq!(r.total, 50);
        assert_eq!(
            r.rejections,
            a.p_values(Method::SpaCrt, Side::Right)
                .iter()
                .filter(|&&p| p <= 0.05)
                .count()
        );
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let mut c1 = small_config(vec![Method::SpaCrt, Method::Gcm, Method::Dcrt], 8);
        let mut a = run_replications(&null_crispr(), &c1).unwrap();
        c1.threads = Some(3);
        let mut b = run_replications(&null_crispr(), &c1).unwrap();
        a.strip_timing();
        b.strip_timing();
        assert_eq!(a.replicates, b.replicates);
    }

    #[test]
    fn invalid_configs() {
        assert!(run_replications(&null_crispr(), &small_config(vec![], 1)).is_err());
        assert!(
            run_replications(&null_crispr(), &small_config(vec![Method::SignFlipSpa], 1)).is_err()
        );
        let mut c = small_config(vec![Method::Dcrt], 1);
        c.dcrt_resamples = 0;
        assert!(run_replications(&null_crispr(), &c).is_err());
        c.dcrt_resamples = 5;
        c.alphas = vec![1.5];
        assert!(run_replications(&null_crispr(), &c).is_err());
    }

    #[test]
    fn score_only_and_failure_recording() {
        let config = small_config(vec![Method::ScoreNb], 3);
        let rep = run_replications(&null_crispr(), &config).unwrap();
        assert_eq!(
            rep.p_values(Method::ScoreNb, Side::Left).len() + rep.failures,
            3
        );
    }

    #[test]
    fn small_gwas_runs() {
        let params = GwasParams {
            hmm: HmmGenerator {
                n_states: 3,
                ..HmmGenerator::default()
            },
            d: 20,
            n: 300,
            gamma0: -1.0,
            eta: 1.0,
        };
        let config = small_config(vec![Method::SpaCrt, Method::Gcm], 2);
        let rep = run_replications(
            &Scenario::Gwas {
                params,
                rule: CvRule::OneSe,
            },
            &config,
        )
        .unwrap();
        assert_eq!(rep.failures, 0, "{:?}", rep.replicates[0].error);
        assert_eq!(rep.p_values(Method::SpaCrt, Side::Two).len(), 40);
        assert_eq!(rep.replicates[0].signals, vec![0, 1]);
        assert_eq!(rep.fdr.len(), 4);
        assert!(rep.fdr.iter().all(|f| (0.0..=1.0).contains(&f.mean_fdp)));
    }
}
