//! End-to-end tests of the `tamis` binary: report files, determinism,
//! exit codes, chart rendering, and dump round-trips.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tamis::model::MixtureParams;
use tempfile::TempDir;

fn tamis_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tamis"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = tamis_bin().args(args).output().expect("spawn tamis");
    assert!(
        out.status.success(),
        "tamis {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn gauss3_config(dir: &Path) -> PathBuf {
    let path = dir.join("gauss3.json");
    fs::write(
        &path,
        r#"{
            "experiment": "gauss3",
            "target": {"kind": "gaussian_iid", "mean": 2.0, "variance": 1.5, "dim": 3},
            "init": {"components": 2,
                     "means": {"kind": "uniform", "low": -3.0, "high": 3.0},
                     "variance": {"kind": "isotropic", "value": 16.0}},
            "algorithm": {"kind": "tamis"},
            "draws_per_stage": 120,
            "ess_min": 30.0,
            "tau": 0.2,
            "stop": {"cumulative_ess": 300.0, "max_iterations": 12},
            "replicates": 2,
            "seed": 11
        }"#,
    )
    .expect("write config");
    path
}

#[test]
fn run_produces_reports_and_reruns_byte_identically() {
    let dir = TempDir::new().expect("tempdir");
    let cfg = gauss3_config(dir.path());
    let out1 = dir.path().join("out1");
    let out2 = dir.path().join("out2");

    run_ok(&["run", cfg.to_str().unwrap(), "--out", out1.to_str().unwrap()]);
    for name in ["aggregate.csv", "trace_r0.csv", "trace_r1.csv", "beta.svg", "kl_hat.svg"] {
        assert!(out1.join(name).exists(), "missing {name}");
    }
    let aggregate = fs::read_to_string(out1.join("aggregate.csv")).expect("aggregate");
    let mut lines = aggregate.lines();
    assert_eq!(
        lines.next().unwrap(),
        "replicate,seed,status,stop_reason,iterations,final_ess,sq_err_mean,sq_err_var_trace,convergence_iter,n_target_evals"
    );
    assert_eq!(lines.count(), 2);
    assert!(aggregate.contains("ok,cumulative_ess"), "{aggregate}");
    let trace = fs::read_to_string(out1.join("trace_r0.csv")).expect("trace");
    assert!(trace.starts_with("t,ess_t,beta_t,s_log_t,kl_hat_t,n_target_evals\n"));

    // Same config, different worker count: byte-identical reports.
    run_ok(&[
        "run", cfg.to_str().unwrap(),
        "--out", out2.to_str().unwrap(),
        "--workers", "2",
    ]);
    let rerun = fs::read(out2.join("aggregate.csv")).expect("rerun aggregate");
    assert_eq!(fs::read(out1.join("aggregate.csv")).unwrap(), rerun);
    assert_eq!(
        fs::read(out1.join("trace_r1.csv")).unwrap(),
        fs::read(out2.join("trace_r1.csv")).unwrap()
    );
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = TempDir::new().expect("tempdir");
    let cfg = gauss3_config(dir.path());
    let out = dir.path().join("out");
    run_ok(&[
        "run", cfg.to_str().unwrap(),
        "--out", out.to_str().unwrap(),
        "--seed", "99",
    ]);
    let aggregate = fs::read_to_string(out.join("aggregate.csv")).expect("aggregate");
    let seeds: Vec<&str> = aggregate
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert_eq!(seeds, ["99", "100"]);
}

#[test]
fn invalid_config_exits_2() {
    let dir = TempDir::new().expect("tempdir");
    let cfg = gauss3_config(dir.path());
    let bad = fs::read_to_string(&cfg).unwrap().replace("\"tau\": 0.2", "\"tau\": 1.0");
    fs::write(&cfg, bad).unwrap();

    let out = tamis_bin().args(["run", cfg.to_str().unwrap()]).output().expect("spawn");
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("[0, 1)"), "{stderr}");

    let missing = tamis_bin()
        .args(["run", dir.path().join("nope.json").to_str().unwrap()])
        .output()
        .expect("spawn");
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn verify_reports_every_check_and_passes() {
    let out = run_ok(&["verify"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let verdicts: Vec<&str> = stdout
        .lines()
        .filter(|l| l.starts_with("PASS") || l.starts_with("FAIL"))
        .collect();
    assert!(verdicts.len() >= 8, "{stdout}");
    assert!(verdicts.iter().all(|l| l.starts_with("PASS")), "{stdout}");
    assert!(stdout.contains("checks passed"), "{stdout}");
}

#[test]
fn plot_renders_both_charts() {
    let dir = TempDir::new().expect("tempdir");
    let trace = dir.path().join("demo.csv");
    fs::write(
        &trace,
        "t,ess_t,beta_t,s_log_t,kl_hat_t,n_target_evals\n\
         1,5.2,0.25,-8.1,4.0,100\n\
         2,40.0,1,-inf,0.5,200\n",
    )
    .expect("write trace");
    let plots = dir.path().join("plots");
    let out = run_ok(&[
        "plot", trace.to_str().unwrap(),
        "--out", plots.to_str().unwrap(),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    for name in ["demo_beta.svg", "demo_kl_hat.svg"] {
        assert!(plots.join(name).exists(), "missing {name}; stdout: {stdout}");
        let svg = fs::read_to_string(plots.join(name)).unwrap();
        assert!(svg.starts_with("<svg"), "not an svg: {name}");
        assert!(svg.contains("<polyline"), "no data drawn: {name}");
    }

    let bad = tamis_bin()
        .args(["plot", dir.path().join("absent.csv").to_str().unwrap()])
        .output()
        .expect("spawn");
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn particle_dumps_round_trip() {
    let dir = TempDir::new().expect("tempdir");
    let cfg = gauss3_config(dir.path());
    let out = dir.path().join("out");
    run_ok(&[
        "run", cfg.to_str().unwrap(),
        "--out", out.to_str().unwrap(),
        "--dump-particles",
    ]);

    let trace_stages = fs::read_to_string(out.join("trace_r0.csv"))
        .expect("trace")
        .lines()
        .count()
        - 1;

    // One proposal record per stage, each parseable back into parameters.
    let proposals = fs::read_to_string(out.join("proposals_r0.txt")).expect("proposals");
    let blocks: Vec<&str> = proposals
        .split("# stage ")
        .filter(|b| !b.trim().is_empty())
        .collect();
    assert_eq!(blocks.len(), trace_stages);
    for block in &blocks {
        let record = block.split_once('\n').expect("stage header").1;
        let theta = MixtureParams::from_text_record(record).expect("parse proposal");
        assert_eq!(theta.dim(), 3);
    }

    // Normalized weights sum to one over all dumped particles.
    let particles = fs::read_to_string(out.join("particles_r0.csv")).expect("particles");
    let mut lines = particles.lines();
    assert_eq!(lines.next().unwrap(), "stage,log_w,weight,x1,x2,x3");
    let total: f64 = lines
        .map(|l| l.split(',').nth(2).unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-9, "weights sum to {total}");
}

#[test]
fn blackbox_config_runs_end_to_end() {
    // The density server is a bin of the library crate; under a whole
    // workspace test it sits next to this crate's own binary.
    let server = Path::new(env!("CARGO_BIN_EXE_tamis")).with_file_name("blackbox-normal");
    if !server.exists() {
        eprintln!("skipping: {} not built", server.display());
        return;
    }
    let dir = TempDir::new().expect("tempdir");
    let cfg = dir.path().join("bb.json");
    fs::write(
        &cfg,
        format!(
            r#"{{
                "experiment": "bb",
                "target": {{"kind": "blackbox", "program": "{}",
                            "args": ["--mean", "2.0", "--variance", "1.5"],
                            "dim": 3, "timeout_secs": 10.0}},
                "init": {{"components": 2,
                         "means": {{"kind": "uniform", "low": -3.0, "high": 3.0}},
                         "variance": {{"kind": "isotropic", "value": 16.0}}}},
                "algorithm": {{"kind": "tamis"}},
                "draws_per_stage": 120,
                "ess_min": 30.0,
                "tau": 0.2,
                "stop": {{"cumulative_ess": 300.0, "max_iterations": 12}},
                "seed": 11
            }}"#,
            server.display()
        ),
    )
    .expect("write config");
    let out = dir.path().join("out");
    run_ok(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let aggregate = fs::read_to_string(out.join("aggregate.csv")).expect("aggregate");
    assert!(aggregate.contains("ok,cumulative_ess"), "{aggregate}");

    // Same seed and draws as the analytic target in gauss3_config: the
    // subprocess route must reproduce the analytic trace bit for bit.
    let analytic_cfg = gauss3_config(dir.path());
    let analytic_out = dir.path().join("analytic");
    run_ok(&[
        "run", analytic_cfg.to_str().unwrap(),
        "--out", analytic_out.to_str().unwrap(),
    ]);
    assert_eq!(
        fs::read(out.join("trace_r0.csv")).unwrap(),
        fs::read(analytic_out.join("trace_r0.csv")).unwrap()
    );
}
