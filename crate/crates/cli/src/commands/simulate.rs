use crate::args::{CrisprArgs, ScenarioArg, SimulateArgs};
use crate::error::{CliError, Result};
use crate::output::{check_p, write_atomic, Jsonl};
use serde::Serialize;
use spacrt::citest::Method;
use spacrt::hmm::HmmGenerator;
use spacrt::sim::{
    run_replications, CrisprParams, GwasParams, ReplicationConfig, ReplicationReport, Scenario,
};

pub const SCHEMA: &str = "spacrt.simulate/1";

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line<'a> {
    Config {
        schema: &'static str,
        scenario: &'a Scenario,
        config: &'a ReplicationConfig,
    },
    Replicate {
        schema: &'static str,
        replicate: usize,
        seed: u64,
        n_hypotheses: usize,
        signals: &'a [usize],
        effective_sample_size: usize,
        #[serde(skip_serializing_if = "Option::is_none")]
        error: Option<&'a str>,
        #[serde(skip_serializing_if = "Option::is_none")]
        fit_secs: Option<f64>,
    },
    PValue {
        schema: &'static str,
        replicate: usize,
        hypothesis: usize,
        method: Method,
        statistic: f64,
        p_left: f64,
        p_right: f64,
        p_two: f64,
        fallback_used: bool,
        #[serde(skip_serializing_if = "Option::is_none")]
        elapsed_secs: Option<f64>,
    },
    Rejection {
        schema: &'static str,
        #[serde(flatten)]
        row: &'a spacrt::sim::RejectionSummary,
    },
    Fdr {
        schema: &'static str,
        #[serde(flatten)]
        row: &'a spacrt::sim::FdrSummary,
    },
    Method {
        schema: &'static str,
        method: Method,
        records: usize,
        fallback_rate: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        mean_elapsed_secs: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        sd_elapsed_secs: Option<f64>,
    },
    Summary {
        schema: &'static str,
        replicates: usize,
        failures: usize,
    },
}

pub fn crispr_params(a: &CrisprArgs) -> CrisprParams {
    let d = CrisprParams::default();
    CrisprParams {
        gamma0: a.gamma0.unwrap_or(d.gamma0),
        beta0: a.beta0.unwrap_or(d.beta0),
        rho: a.rho.unwrap_or(d.rho),
        size: a.size.unwrap_or(d.size),
        n: a.n.unwrap_or(d.n),
    }
}

fn scenario(args: &SimulateArgs) -> Result<Scenario> {
    let c = &args.crispr;
    match args.scenario {
        ScenarioArg::Crispr => {
            if args.d.is_some()
                || args.eta.is_some()
                || args.states.is_some()
                || args.stay.is_some()
            {
                return Err(CliError::Config(
                    "--d, --eta, --states and --stay apply to the gwas scenario".into(),
                ));
            }
            Ok(Scenario::Crispr {
                params: crispr_params(c),
            })
        }
        ScenarioArg::Gwas => {
            if c.beta0.is_some() || c.rho.is_some() || c.size.is_some() {
                return Err(CliError::Config(
                    "--beta0, --rho and --size apply to the crispr scenario".into(),
                ));
            }
            let d = GwasParams::default();
            let g = HmmGenerator::default();
            let params = GwasParams {
                hmm: HmmGenerator {
                    n_states: args.states.unwrap_or(g.n_states),
                    gamma: args.stay.unwrap_or(g.gamma),
                    ..g
                },
                d: args.d.unwrap_or(d.d),
                n: c.n.unwrap_or(d.n),
                gamma0: c.gamma0.unwrap_or(d.gamma0),
                eta: args.eta.unwrap_or(d.eta),
            };
            Ok(Scenario::Gwas {
                params,
                rule: args.cv_rule.into(),
            })
        }
    }
}

fn summary_csv(report: &ReplicationReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::Numerical(format!("cannot format summary: {e}"));
    w.write_record([
        "method",
        "side",
        "alpha",
        "rejections",
        "total",
        "rate",
        "se",
    ])
    .map_err(fail)?;
    for r in &report.rejections {
        let side = serde_json::to_value(r.side)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        w.write_record([
            r.method.name().to_string(),
            side,
            r.alpha.to_string(),
            r.rejections.to_string(),
            r.total.to_string(),
            r.rate.to_string(),
            r.se.to_string(),
        ])
        .map_err(fail)?;
    }
    w.into_inner()
        .map_err(|e| CliError::Numerical(format!("cannot format summary: {e}")))
}

pub fn run(args: &SimulateArgs, threads: Option<usize>) -> Result<()> {
    let scenario = scenario(args)?;
    let methods = if args.methods.is_empty() {
        match args.scenario {
            ScenarioArg::Crispr => vec![Method::SpaCrt, Method::Dcrt, Method::Gcm, Method::ScoreNb],
            ScenarioArg::Gwas => vec![Method::SpaCrt, Method::Dcrt, Method::Gcm],
        }
    } else {
        args.methods.clone()
    };
    if args.reps == 0 {
        return Err(CliError::Config("--reps must be at least 1".into()));
    }
    let config = ReplicationConfig {
        methods,
        n_reps: args.reps,
        alphas: args.alphas.clone(),
        seed: args.seed,
        threads,
        dcrt_resamples: args.resamples,
    };
    let report = run_replications(&scenario, &config)?;
    // the thread count does not affect results, so keep it out of the recorded config
    let recorded = ReplicationConfig {
        threads: None,
        ..config
    };

    let t = args.timing;
    let mut out = Jsonl::default();
    out.push(&Line::Config {
        schema: SCHEMA,
        scenario: &scenario,
        config: &recorded,
    })?;
    for rep in &report.replicates {
        out.push(&Line::Replicate {
            schema: SCHEMA,
            replicate: rep.index,
            seed: rep.seed,
            n_hypotheses: rep.n_hypotheses,
            signals: &rep.signals,
            effective_sample_size: rep.effective_sample_size,
            error: rep.error.as_deref(),
            fit_secs: t.then_some(rep.fit_secs),
        })?;
        for r in &rep.records {
            check_p(
                &[r.p_left, r.p_right, r.p_two],
                &format!("replicate {} {}", rep.index, r.method),
            )?;
            out.push(&Line::PValue {
                schema: SCHEMA,
                replicate: rep.index,
                hypothesis: r.hypothesis,
                method: r.method,
                statistic: r.statistic,
                p_left: r.p_left,
                p_right: r.p_right,
                p_two: r.p_two,
                fallback_used: r.fallback_used,
                elapsed_secs: t.then_some(r.elapsed_secs),
            })?;
        }
    }
    for row in &report.rejections {
        out.push(&Line::Rejection {
            schema: SCHEMA,
            row,
        })?;
    }
    for row in &report.fdr {
        out.push(&Line::Fdr {
            schema: SCHEMA,
            row,
        })?;
    }
    for m in &report.methods {
        out.push(&Line::Method {
            schema: SCHEMA,
            method: m.method,
            records: m.records,
            fallback_rate: m.fallback_rate,
            mean_elapsed_secs: t.then_some(m.mean_elapsed_secs),
            sd_elapsed_secs: t.then_some(m.sd_elapsed_secs),
        })?;
    }
    out.push(&Line::Summary {
        schema: SCHEMA,
        replicates: report.replicates.len(),
        failures: report.failures,
    })?;

    if report.failures == report.replicates.len() {
        let first = report
            .replicates
            .first()
            .and_then(|r| r.error.clone())
            .unwrap_or_default();
        return Err(CliError::Numerical(format!(
            "every replicate failed; first error: {first}"
        )));
    }
    let summary = args
        .summary
        .as_ref()
        .map(|_| summary_csv(&report))
        .transpose()?;
    write_atomic(&args.output, &out.into_bytes())?;
    if let (Some(path), Some(bytes)) = (&args.summary, summary) {
        write_atomic(path, &bytes)?;
    }
    Ok(())
}
