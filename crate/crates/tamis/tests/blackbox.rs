//! End-to-end tests of the subprocess target against the bundled
//! `blackbox-normal` server, including its fault-injection modes.

use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tamis::engine::{run_tamis, TamisConfig};
use tamis::math::LN_2PI;
use tamis::model::MixtureParams;
use tamis::targets::{BlackboxTarget, GaussianIid, Target};
use tamis::Error;

fn spawn_fixture(args: &[&str], dim: usize, timeout_ms: u64) -> BlackboxTarget {
    let args: Vec<String> = args.iter().map(|s| s.to_string()).collect();
    BlackboxTarget::spawn(
        env!("CARGO_BIN_EXE_blackbox-normal"),
        &args,
        dim,
        Duration::from_millis(timeout_ms),
    )
    .expect("spawn fixture server")
}

fn iid_normal_log_density(x: &[f64], mean: f64, variance: f64) -> f64 {
    x.iter()
        .map(|xi| {
            let diff = xi - mean;
            -0.5 * (LN_2PI + variance.ln() + diff * diff / variance)
        })
        .sum()
}

#[test]
fn replies_match_the_analytic_normal_and_are_counted() {
    let mut t = spawn_fixture(&["--mean", "2.5", "--variance", "4.0"], 3, 5000);
    assert_eq!(t.dim(), 3);
    assert_eq!(t.evaluations(), 0);
    let points: [[f64; 3]; 4] = [
        [0.0, 0.0, 0.0],
        [2.5, 2.5, 2.5],
        [-7.25, 31.0, 0.125],
        [1e-3, -1e3, 2.0],
    ];
    for (i, x) in points.iter().enumerate() {
        let got = t.log_density(x).expect("density exchange");
        let expect = iid_normal_log_density(x, 2.5, 4.0);
        assert_eq!(got, expect, "reply for point {i} lost precision in transit");
        assert_eq!(t.evaluations(), i as u64 + 1);
    }
}

#[test]
fn spawn_failure_reports_the_program() {
    let err = BlackboxTarget::spawn(
        "/nonexistent/blackbox-server",
        &[],
        2,
        Duration::from_millis(500),
    )
    .unwrap_err();
    match err {
        Error::Blackbox(msg) => assert!(msg.contains("failed to spawn"), "{msg}"),
        other => panic!("expected Blackbox error, got {other:?}"),
    }
}

#[test]
fn wrong_point_dimension_is_rejected_before_any_exchange() {
    let mut t = spawn_fixture(&[], 2, 5000);
    let err = t.log_density(&[1.0, 2.0, 3.0]).unwrap_err();
    assert!(matches!(
        err,
        Error::DimensionMismatch {
            expected: 2,
            got: 3
        }
    ));
    assert_eq!(t.evaluations(), 0);
    // The server never saw the bad request, so it still works.
    assert!(t.log_density(&[0.5, -0.5]).is_ok());
    assert_eq!(t.evaluations(), 1);
}

#[test]
fn garbled_reply_is_a_protocol_error() {
    let mut t = spawn_fixture(&["--garble-after", "2"], 1, 5000);
    assert!(t.log_density(&[0.0]).is_ok());
    assert!(t.log_density(&[1.0]).is_ok());
    let err = t.log_density(&[2.0]).unwrap_err();
    match err {
        Error::Blackbox(msg) => assert!(msg.contains("malformed reply"), "{msg}"),
        other => panic!("expected Blackbox error, got {other:?}"),
    }
    assert_eq!(t.evaluations(), 2);
}

#[test]
fn silent_server_times_out() {
    let mut t = spawn_fixture(&["--hang-after", "1"], 1, 300);
    assert!(t.log_density(&[0.0]).is_ok());
    let err = t.log_density(&[1.0]).unwrap_err();
    match err {
        Error::Blackbox(msg) => assert!(msg.contains("no response within"), "{msg}"),
        other => panic!("expected Blackbox error, got {other:?}"),
    }
}

#[test]
fn dead_server_reports_its_exit() {
    let mut t = spawn_fixture(&["--die-after", "0"], 1, 5000);
    let err = t.log_density(&[0.0]).unwrap_err();
    match err {
        Error::Blackbox(msg) => assert!(msg.contains("closed its output"), "{msg}"),
        other => panic!("expected Blackbox error, got {other:?}"),
    }
}

fn small_config() -> TamisConfig {
    TamisConfig::new(50, 20.0, 0.1, f64::INFINITY, 3)
}

fn wide_proposal(dim: usize) -> MixtureParams {
    MixtureParams::new(vec![1.0], vec![1.0; dim], vec![9.0; dim], dim).unwrap()
}

#[test]
fn mid_run_death_yields_a_located_failure_and_partial_trace() {
    // Stage 1 consumes 50 evaluations; the server dies on the 76th, which is
    // particle 25 (0-based) of stage 2.
    let mut t = spawn_fixture(&["--die-after", "75"], 2, 5000);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let failure = run_tamis(&mut t, wide_proposal(2), &small_config(), &mut rng).unwrap_err();
    assert_eq!(failure.partial.len(), 1);
    assert_eq!(failure.partial[0].t, 1);
    match failure.error {
        Error::TargetEval {
            stage,
            particle,
            ref source,
        } => {
            assert_eq!((stage, particle), (2, 25));
            assert!(matches!(**source, Error::Blackbox(_)));
        }
        ref other => panic!("expected TargetEval, got {other:?}"),
    }
    assert_eq!(t.evaluations(), 75);
}

#[test]
fn engine_runs_identically_over_the_subprocess_and_the_analytic_target() {
    // The server prints with round-trip float formatting, so a run through
    // the protocol must be bit-identical to one against GaussianIid.
    let cfg = small_config();
    let mut bb = spawn_fixture(&["--mean", "1.5", "--variance", "2.0"], 2, 5000);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let via_protocol = run_tamis(&mut bb, wide_proposal(2), &cfg, &mut rng).unwrap();

    let mut direct_target = GaussianIid::new(1.5, 2.0, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let direct = run_tamis(&mut direct_target, wide_proposal(2), &cfg, &mut rng).unwrap();

    assert_eq!(via_protocol.trace_csv_string(), direct.trace_csv_string());
    assert_eq!(via_protocol.final_log_w.log_w(), direct.final_log_w.log_w());
    assert_eq!(via_protocol.stop_reason, direct.stop_reason);
    assert_eq!(bb.evaluations(), 150);
}
