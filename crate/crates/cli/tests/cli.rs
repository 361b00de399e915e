use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use spacrt::hmm::HmmGenerator;
use spacrt::sim::{simulate_crispr, CrisprParams};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn spacrt() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_spacrt"));
    c.env_remove("SPACRT_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    spacrt().args(args).output().unwrap()
}

fn records(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_p(v: &Value) {
    for key in ["p_left", "p_right", "p_two"] {
        let p = v[key]
            .as_f64()
            .unwrap_or_else(|| panic!("{key} missing in {v}"));
        assert!((0.0..=1.0).contains(&p), "{key} = {p}");
    }
}

/// CRISPR-model table with columns x, y, z and a second perturbation x2.
fn crispr_csv(dir: &Path, n: usize) -> PathBuf {
    let params = CrisprParams {
        gamma0: -1.5,
        beta0: -1.0,
        rho: 0.0,
        size: 1.0,
        n,
    };
    let a = simulate_crispr(&params, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    let b = simulate_crispr(&params, &mut ChaCha8Rng::seed_from_u64(12)).unwrap();
    let mut s = String::from("x,x2,y,z\n");
    for i in 0..n {
        writeln!(s, "{},{},{},{}", a.x[i], b.x[i], a.y[i], a.z[(i, 0)]).unwrap();
    }
    let path = dir.join("data.csv");
    std::fs::write(&path, s).unwrap();
    path
}

#[test]
fn test_reports_every_requested_method() {
    let dir = tempfile::tempdir().unwrap();
    let input = crispr_csv(dir.path(), 400);
    let out = dir.path().join("out.jsonl");
    let o = run(&[
        "test",
        "-i",
        input.to_str().unwrap(),
        "-o",
        out.to_str().unwrap(),
        "--x-col",
        "x",
        "--y-col",
        "y",
        "--z-cols",
        "z",
        "--methods",
        "spacrt,gcm,dcrt,score_nb,signflip_spa",
        "--seed",
        "3",
        "--resamples",
        "500",
        "--side",
        "right",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let recs = records(&out);
    let methods: Vec<&str> = recs.iter().map(|r| r["method"].as_str().unwrap()).collect();
    assert_eq!(
        methods,
        ["spacrt", "gcm", "dcrt", "score_nb", "signflip_spa"]
    );
    for r in &recs {
        assert_eq!(r["schema"], "spacrt.test/1");
        assert_p(r);
        assert_eq!(r["p"], r["p_right"]);
        assert!(r.get("elapsed_secs").is_none());
    }
    // spacrt and dcrt share one fit, hence one statistic
    assert_eq!(recs[0]["statistic"], recs[2]["statistic"]);
    assert!(recs[0]["spa_right"]["s_hat"].is_number());
    assert_eq!(recs[2]["resamples"], 500);
}

#[test]
fn test_output_is_deterministic_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let input = crispr_csv(dir.path(), 300);
    let go = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let o = spacrt()
            .env("SPACRT_THREADS", threads)
            .args([
                "test",
                "-i",
                input.to_str().unwrap(),
                "-o",
                out.to_str().unwrap(),
                "--x-col",
                "x,x2",
                "--y-col",
                "y",
                "--z-cols",
                "z",
                "--methods",
                "spacrt,dcrt",
                "--seed",
                "9",
                "--resamples",
                "300",
            ])
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read(out).unwrap()
    };
    let a = go("a.jsonl", "1");
    assert_eq!(a, go("b.jsonl", "1"));
    assert_eq!(a, go("c.jsonl", "2"));
    let text = String::from_utf8(a).unwrap();
    let hyps: Vec<u64> = text
        .lines()
        .map(|l| {
            serde_json::from_str::<Value>(l).unwrap()["hypothesis"]
                .as_u64()
                .unwrap()
        })
        .collect();
    assert_eq!(hyps, [0, 0, 1, 1]);
}

#[test]
fn timing_flag_adds_elapsed_field() {
    let dir = tempfile::tempdir().unwrap();
    let input = crispr_csv(dir.path(), 200);
    let out = dir.path().join("out.jsonl");
    let o = run(&[
        "test",
        "-i",
        input.to_str().unwrap(),
        "-o",
        out.to_str().unwrap(),
        "--x-col",
        "x",
        "--y-col",
        "y",
        "--timing",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(records(&out)
        .iter()
        .all(|r| r["elapsed_secs"].as_f64().unwrap() >= 0.0));
}

#[test]
fn x_equal_to_its_mean_gives_zero_statistic() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("t.tsv");
    let mut s = String::from("x\ty\tmx\tmy\n");
    for i in 0..50 {
        let x = 1 + i % 4;
        writeln!(s, "{x}\t{}\t{x}\t{}", i % 3, 1.0 + 0.01 * i as f64).unwrap();
    }
    std::fs::write(&input, s).unwrap();
    let out = dir.path().join("out.jsonl");
    let o = run(&[
        "test",
        "-i",
        input.to_str().unwrap(),
        "-o",
        out.to_str().unwrap(),
        "--x-col",
        "x",
        "--y-col",
        "y",
        "--mu-x-col",
        "mx",
        "--x-family",
        "poisson",
        "--mu-y-col",
        "my",
        "--methods",
        "spacrt,gcm,dcrt,signflip_spa",
        "--seed",
        "1",
        "--resamples",
        "100",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let recs = records(&out);
    assert_eq!(recs.len(), 4);
    for r in &recs {
        assert!(r["statistic"].as_f64().unwrap().abs() < 1e-12, "{r}");
        assert_p(r);
    }
}

#[test]
fn hmm_x_model_tests_each_site() {
    let dir = tempfile::tempdir().unwrap();
    let gen = HmmGenerator {
        n_states: 3,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let hmm = gen.generate(6, &mut rng).unwrap();
    let seqs = hmm.sample(300, &mut rng);
    let rows = |m: &nalgebra::DMatrix<f64>| -> Vec<Vec<f64>> {
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    };
    let file = serde_json::json!({
        "initial": hmm.initial(),
        "transition": rows(hmm.transition(0)),
        "emission": rows(hmm.emission()),
    });
    let hmm_path = dir.path().join("hmm.json");
    std::fs::write(&hmm_path, file.to_string()).unwrap();

    let mut s = String::from("s0,s1,s2,s3,s4,s5,y\n");
    for (i, seq) in seqs.iter().enumerate() {
        let cells: Vec<String> = seq.iter().map(|v| v.to_string()).collect();
        writeln!(
            s,
            "{},{}",
            cells.join(","),
            (i % 5 == 0) as u8 + seq[1] as u8 / 2
        )
        .unwrap();
    }
    let input = dir.path().join("g.csv");
    std::fs::write(&input, s).unwrap();
    let out = dir.path().join("out.jsonl");
    let o = run(&[
        "test",
        "-i",
        input.to_str().unwrap(),
        "-o",
        out.to_str().unwrap(),
        "--x-col",
        "s0,s3",
        "--y-col",
        "y",
        "--x-model",
        "hmm",
        "--hmm-file",
        hmm_path.to_str().unwrap(),
        "--site-cols",
        "s0,s1,s2,s3,s4,s5",
        "--y-model",
        "logistic",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let recs = records(&out);
    assert_eq!(recs.len(), 4);
    assert_eq!(recs[2]["x_col"], "s3");
    recs.iter().for_each(assert_p);
}

fn expect_failure(args: &[&str], exit: i32, code: &str, out: &Path) {
    let o = run(args);
    assert_eq!(o.status.code(), Some(exit), "{}", stderr(&o));
    let err = stderr(&o);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with(&format!("spacrt: error[{code}]")), "{err}");
    assert!(!out.exists(), "partial output left behind");
}

#[test]
fn errors_map_to_exit_codes_without_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let input = crispr_csv(dir.path(), 100);
    let i = input.to_str().unwrap();
    let out = dir.path().join("never.jsonl");
    let o = out.to_str().unwrap();

    expect_failure(
        &["test", "-i", i, "-o", o, "--x-col", "nope", "--y-col", "y"],
        3,
        "missing_column",
        &out,
    );
    expect_failure(
        &[
            "test",
            "-i",
            i,
            "-o",
            o,
            "--x-col",
            "x",
            "--y-col",
            "y",
            "--methods",
            "dcrt",
        ],
        2,
        "config_invalid",
        &out,
    );
    expect_failure(
        &[
            "test",
            "-i",
            i,
            "-o",
            o,
            "--x-col",
            "x",
            "--y-col",
            "y",
            "--y-model",
            "gamma",
        ],
        2,
        "config_invalid",
        &out,
    );
    expect_failure(
        &[
            "test",
            "-i",
            i,
            "-o",
            o,
            "--x-col",
            "x",
            "--y-col",
            "y",
            "--methods",
            "bogus",
        ],
        2,
        "usage",
        &out,
    );
    expect_failure(
        &["simulate", "--scenario", "crispr", "-o", o],
        2,
        "usage",
        &out,
    );

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "x,y\n1,2\n0,oops\n").unwrap();
    expect_failure(
        &[
            "test",
            "-i",
            bad.to_str().unwrap(),
            "-o",
            o,
            "--x-col",
            "x",
            "--y-col",
            "y",
        ],
        3,
        "unparseable_row",
        &out,
    );

    // Bernoulli X outside {0, 1}
    let wrong = dir.path().join("wrong.csv");
    std::fs::write(&wrong, "x,y\n2,1\n0,0\n1,3\n").unwrap();
    expect_failure(
        &[
            "test",
            "-i",
            wrong.to_str().unwrap(),
            "-o",
            o,
            "--x-col",
            "x",
            "--y-col",
            "y",
        ],
        3,
        "data_invalid",
        &out,
    );

    // a failing run leaves an existing output untouched
    std::fs::write(&out, "keep").unwrap();
    let r = run(&["test", "-i", i, "-o", o, "--x-col", "nope", "--y-col", "y"]);
    assert_eq!(r.status.code(), Some(3));
    assert_eq!(std::fs::read_to_string(&out).unwrap(), "keep");
}

#[test]
fn simulate_crispr_counts_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let go = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let summary = dir.path().join(format!("{name}.csv"));
        let mut args = vec![
            "simulate",
            "--scenario",
            "crispr",
            "--seed",
            "21",
            "--reps",
            "6",
            "--n",
            "400",
            "--gamma0",
            "-2",
            "--beta0",
            "-1",
            "--methods",
            "spacrt,gcm,dcrt",
            "--resamples",
            "200",
            "-o",
            out.to_str().unwrap(),
            "--summary",
            summary.to_str().unwrap(),
        ];
        args.extend_from_slice(extra);
        let o = run(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        (
            std::fs::read(&out).unwrap(),
            std::fs::read_to_string(summary).unwrap(),
        )
    };
    let (a, summary) = go("a.jsonl", &[]);
    assert_eq!(a, go("b.jsonl", &[]).0);
    assert_eq!(a, go("c.jsonl", &["--threads", "1"]).0);

    let recs: Vec<Value> = String::from_utf8(a)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let count = |kind: &str| recs.iter().filter(|r| r["record"] == kind).count();
    assert_eq!(count("config"), 1);
    assert_eq!(count("replicate"), 6);
    assert_eq!(count("p_value"), 18);
    assert_eq!(count("rejection"), 3 * 3 * 2);
    assert_eq!(count("method"), 3);
    assert_eq!(count("summary"), 1);
    recs.iter()
        .filter(|r| r["record"] == "p_value")
        .for_each(assert_p);
    assert!(recs.iter().all(|r| r["schema"] == "spacrt.simulate/1"));
    assert!(summary.starts_with("method,side,alpha,rejections,total,rate,se\n"));
    assert_eq!(summary.lines().count(), 1 + 18);

    let (t, _) = go("t.jsonl", &["--timing"]);
    let t = String::from_utf8(t).unwrap();
    assert!(t.contains("elapsed_secs"));
}

#[test]
fn simulate_gwas_small() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g.jsonl");
    let o = run(&[
        "simulate",
        "--scenario",
        "gwas",
        "--seed",
        "4",
        "--reps",
        "2",
        "--d",
        "20",
        "--n",
        "300",
        "--states",
        "4",
        "--methods",
        "spacrt,gcm",
        "-o",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let recs = records(&out);
    assert_eq!(
        recs.iter().filter(|r| r["record"] == "p_value").count(),
        2 * 20 * 2
    );
    assert_eq!(recs.iter().filter(|r| r["record"] == "fdr").count() % 2, 0);
    let rep = recs.iter().find(|r| r["record"] == "replicate").unwrap();
    assert_eq!(rep["signals"].as_array().unwrap().len(), 2);

    let bad = run(&[
        "simulate",
        "--scenario",
        "crispr",
        "--seed",
        "1",
        "--d",
        "5",
        "-o",
        out.to_str().unwrap(),
    ]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn bench_table_layout_and_cost_ordering() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.jsonl");
    let o = run(&[
        "bench",
        "--seed",
        "2",
        "--reps",
        "4",
        "--n",
        "2000",
        "--gamma0",
        "-1",
        "--methods",
        "spacrt,gcm,dcrt",
        "--resamples",
        "10,10000",
        "-o",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = records(&out);
    let labels: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{}{}",
                r["method"].as_str().unwrap(),
                r["resamples"]
                    .as_u64()
                    .map_or(String::new(), |m| format!("@{m}"))
            )
        })
        .collect();
    assert_eq!(labels, ["spacrt", "gcm", "dcrt@10", "dcrt@10000"]);
    let mean = |i: usize| rows[i]["mean_secs"].as_f64().unwrap();
    assert!(rows
        .iter()
        .all(|r| r["hypotheses"] == 4 && r["sd_secs"].as_f64().unwrap() >= 0.0));
    assert!(mean(0) < mean(3));
    // cost linear in M, allowing a factor 3 for scheduling noise
    assert!(
        mean(3) / mean(2) >= 100.0 / 3.0,
        "{} vs {}",
        mean(3),
        mean(2)
    );
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("dcrt(M=10000)"));

    let bad = run(&["bench", "--reps", "2"]);
    assert_eq!(bad.status.code(), Some(2));
}
