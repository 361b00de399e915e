use crate::args::BenchArgs;
use crate::commands::simulate::crispr_params;
use crate::error::{CliError, Result};
use crate::output::{write_atomic, Jsonl};
use serde::Serialize;
use spacrt::citest::Method;
use spacrt::sim::{run_replications, ReplicationConfig, Scenario};

pub const SCHEMA: &str = "spacrt.bench/1";

#[derive(Debug, Serialize)]
pub struct BenchRow {
    pub schema: &'static str,
    pub method: Method,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resamples: Option<usize>,
    pub hypotheses: usize,
    pub mean_secs: f64,
    pub sd_secs: f64,
}

/// Per-hypothesis wall time on one thread; model fitting is shared and excluded.
pub fn run(args: &BenchArgs) -> Result<()> {
    if args.reps == 0 || args.methods.is_empty() {
        return Err(CliError::Config(
            "bench needs at least one method and one repetition".into(),
        ));
    }
    if args.methods.contains(&Method::Dcrt)
        && (args.resamples.is_empty() || args.resamples.contains(&0))
    {
        return Err(CliError::Config(
            "--resamples values must be at least 1".into(),
        ));
    }
    let mut methods = args.methods.clone();
    methods.dedup();
    let scenario = Scenario::Crispr {
        params: crispr_params(&args.crispr),
    };
    let config = |methods: Vec<Method>, m: usize| ReplicationConfig {
        methods,
        n_reps: args.reps,
        alphas: vec![0.05],
        seed: args.seed,
        threads: Some(1),
        dcrt_resamples: m,
    };

    let others: Vec<Method> = methods
        .iter()
        .copied()
        .filter(|&m| m != Method::Dcrt)
        .collect();
    let base = if others.is_empty() {
        None
    } else {
        Some(run_replications(&scenario, &config(others, 1))?)
    };

    let mut rows = Vec::new();
    for &method in &methods {
        if method == Method::Dcrt {
            for &m in &args.resamples {
                let report = run_replications(&scenario, &config(vec![Method::Dcrt], m))?;
                let s = report.method_summary(Method::Dcrt).expect("requested");
                rows.push(BenchRow {
                    schema: SCHEMA,
                    method,
                    resamples: Some(m),
                    hypotheses: s.records,
                    mean_secs: s.mean_elapsed_secs,
                    sd_secs: s.sd_elapsed_secs,
                });
            }
        } else {
            let s = base
                .as_ref()
                .and_then(|r| r.method_summary(method))
                .expect("requested");
            rows.push(BenchRow {
                schema: SCHEMA,
                method,
                resamples: None,
                hypotheses: s.records,
                mean_secs: s.mean_elapsed_secs,
                sd_secs: s.sd_elapsed_secs,
            });
        }
    }
    if rows.iter().any(|r| r.hypotheses == 0) {
        return Err(CliError::Numerical(
            "every replicate failed for some method".into(),
        ));
    }

    println!(
        "{:<22} {:>10} {:>14} {:>14}",
        "method", "hypotheses", "mean_secs", "sd_secs"
    );
    for r in &rows {
        let label = match r.resamples {
            Some(m) => format!("{}(M={m})", r.method),
            None => r.method.to_string(),
        };
        println!(
            "{label:<22} {:>10} {:>14.6e} {:>14.6e}",
            r.hypotheses, r.mean_secs, r.sd_secs
        );
    }
    if let Some(path) = &args.output {
        let mut out = Jsonl::default();
        for r in &rows {
            out.push(r)?;
        }
        write_atomic(path, &out.into_bytes())?;
    }
    Ok(())
}
