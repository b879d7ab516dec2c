//! The adaptive importance sampling loop: stage weighting, stopping on
//! cumulative effective sample size, temperature calibration with
//! anti-truncation, resampling, the EM proposal update, and final recycling
//! of every stage's draws under the deterministic mixture of proposals.

use crate::adapt::{em_fit, resample, EmSettings, ResampleScheme};
use crate::model::{MixtureParams, SampleBatch};
use crate::targets::Target;
use crate::weights::{log_weights, recycle_weights_refs, LogWeightBatch};
use crate::{Error, Result};
use rand::Rng;
use std::fmt;
use std::io::Write;

/// Number of draws per stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NtSchedule {
    Constant(usize),
    PerStage(Vec<usize>),
}

impl NtSchedule {
    /// Draw count for 1-based stage `t`.
    pub fn at(&self, t: usize) -> usize {
        match self {
            NtSchedule::Constant(n) => *n,
            NtSchedule::PerStage(v) => v[t - 1],
        }
    }

    fn min_over(&self, stages: usize) -> usize {
        match self {
            NtSchedule::Constant(n) => *n,
            NtSchedule::PerStage(v) => v[..stages].iter().copied().min().unwrap_or(0),
        }
    }
}

/// Settings shared by all three samplers. The baselines ignore the fields
/// their definitions pin: AMIS and N-PMC force `tau` to 0, and only the
/// tempered sampler uses `ess_min` and `bisection_tol`.
#[derive(Debug, Clone)]
pub struct TamisConfig {
    pub n_per_stage: NtSchedule,
    /// Effective sample size the temperature calibration must preserve.
    pub ess_min: f64,
    /// Anti-truncation quantile in [0, 1).
    pub tau: f64,
    /// Stop once the cumulative stage ESS exceeds this (may be +inf).
    pub ess_predefined: f64,
    pub max_iterations: usize,
    pub bisection_tol: f64,
    pub em: EmSettings,
    pub resampling: ResampleScheme,
}

impl TamisConfig {
    /// Constant-schedule config with default tolerances.
    pub fn new(n: usize, ess_min: f64, tau: f64, ess_predefined: f64, max_iterations: usize) -> Self {
        TamisConfig {
            n_per_stage: NtSchedule::Constant(n),
            ess_min,
            tau,
            ess_predefined,
            max_iterations,
            bisection_tol: 1e-6,
            em: EmSettings::default(),
            resampling: ResampleScheme::Systematic,
        }
    }

    /// Checks every invariant against the initial proposal. Hard violations
    /// are errors; the returned strings are advisory warnings.
    pub fn validate(&self, proposal: &MixtureParams) -> Result<Vec<String>> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.max_iterations == 0 {
            return bad("max_iterations must be >= 1".into());
        }
        match &self.n_per_stage {
            NtSchedule::Constant(n) if *n < 2 => {
                return bad(format!("draws per stage must be >= 2, got {n}"));
            }
            NtSchedule::PerStage(v) => {
                if v.len() < self.max_iterations {
                    return bad(format!(
                        "per-stage schedule has {} entries for {} iterations",
                        v.len(),
                        self.max_iterations
                    ));
                }
                if v[..self.max_iterations].iter().any(|n| *n < 2) {
                    return bad("every per-stage draw count must be >= 2".into());
                }
            }
            _ => {}
        }
        let min_n = self.n_per_stage.min_over(self.max_iterations) as f64;
        if !self.ess_min.is_finite() || !(1.0..=min_n).contains(&self.ess_min) {
            return bad(format!(
                "ess_min must lie in [1, min N_t = {min_n}], got {}",
                self.ess_min
            ));
        }
        if !(0.0..1.0).contains(&self.tau) {
            return bad(format!("tau must lie in [0, 1), got {}", self.tau));
        }
        if self.ess_predefined.is_nan() || self.ess_predefined <= 0.0 {
            return bad(format!(
                "ess_predefined must be positive, got {}",
                self.ess_predefined
            ));
        }
        if !self.bisection_tol.is_finite() || self.bisection_tol <= 0.0 {
            return bad(format!(
                "bisection_tol must be positive, got {}",
                self.bisection_tol
            ));
        }
        if self.em.max_steps == 0 {
            return bad("EM needs max_steps >= 1".into());
        }
        if !(self.em.rel_tol >= 0.0 && self.em.rel_tol.is_finite()) {
            return bad(format!("EM rel_tol must be finite and >= 0, got {}", self.em.rel_tol));
        }

        let mut warnings = Vec::new();
        let mean_params = (proposal.n_components() * proposal.dim()) as f64;
        if self.ess_min <= 2.0 * mean_params {
            warnings.push(format!(
                "ess_min = {} does not exceed twice the {} mean parameters of the \
                 proposal; EM updates may be underdetermined",
                self.ess_min, mean_params
            ));
        }
        Ok(warnings)
    }
}

/// Why a run stopped. When both conditions hold at the same stage, the
/// effective-sample-size rule wins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    CumulativeEss,
    MaxIterations,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::CumulativeEss => "cumulative_ess",
            StopReason::MaxIterations => "max_iterations",
        })
    }
}

/// Everything produced at one stage. `log_w` holds the stage importance
/// weights for the tempered sampler and N-PMC, and the pooled
/// all-stages-so-far weights for AMIS. The stopping stage performs no
/// calibration, so it records `beta_t = 1` and `s_log_t = -inf`.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub t: usize,
    /// Proposal the stage sampled from (before its EM update).
    pub theta: MixtureParams,
    pub draws: SampleBatch,
    /// Cached target log-densities, one per draw; never recomputed.
    pub log_pi: Vec<f64>,
    pub log_w: LogWeightBatch,
    pub ess_t: f64,
    pub beta_t: f64,
    pub s_log_t: f64,
    pub kl_hat_t: f64,
    /// Cumulative target evaluations through the end of this stage.
    pub n_target_evals: u64,
}

/// A completed run: the per-stage records plus the final recycled weights
/// over every draw of every stage (stage-major, row-major within a stage).
#[derive(Debug, Clone)]
pub struct RunResult {
    pub records: Vec<IterationRecord>,
    pub final_log_w: LogWeightBatch,
    pub final_ess: f64,
    pub stop_reason: StopReason,
    pub n_target_evals: u64,
}

impl RunResult {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    /// All draws in final-weight order, without copying.
    pub fn particle_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.records
            .iter()
            .flat_map(|r| (0..r.draws.len()).map(move |i| r.draws.row(i)))
    }

    /// Writes the per-stage diagnostics as CSV.
    pub fn write_trace_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_records_csv(&self.records, out)
    }

    pub fn trace_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_trace_csv(&mut buf).expect("write to Vec");
        String::from_utf8(buf).expect("trace is ascii")
    }
}

/// Writes stage records as trace CSV; works for partial traces too.
pub fn write_records_csv<W: Write>(records: &[IterationRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "t,ess_t,beta_t,s_log_t,kl_hat_t,n_target_evals")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.t, r.ess_t, r.beta_t, r.s_log_t, r.kl_hat_t, r.n_target_evals
        )?;
    }
    Ok(())
}

/// A failed run, carrying the records of every stage completed before the
/// failure so partial traces stay inspectable.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub partial: Vec<IterationRecord>,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "run failed after {} completed stages: {}",
            self.partial.len(),
            self.error
        )
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Normalized-weight divergence diagnostic sum_i w_i ln w_i + ln N. Zero for
/// uniform weights, ln N for a degenerate vector, clamped below at 0.
pub fn kl_hat(normalized_weights: &[f64]) -> f64 {
    if normalized_weights.is_empty() {
        return 0.0;
    }
    let h: f64 = normalized_weights
        .iter()
        .map(|&w| if w > 0.0 { w * w.ln() } else { 0.0 })
        .sum();
    (h + (normalized_weights.len() as f64).ln()).max(0.0)
}

/// The N-PMC temperature ladder 1 / (1 + exp(-(t - ell))).
pub fn npmc_beta(t: usize, ell: f64) -> f64 {
    1.0 / (1.0 + (-(t as f64 - ell)).exp())
}

/// Tempered, anti-truncated adaptive run.
pub fn run_tamis<T, R>(
    target: &mut T,
    theta1: MixtureParams,
    cfg: &TamisConfig,
    rng: &mut R,
) -> std::result::Result<RunResult, RunFailure>
where
    T: Target + ?Sized,
    R: Rng + ?Sized,
{
    run_impl(target, theta1, cfg, rng, Flavor::Tamis)
}

/// AMIS baseline: no tempering or truncation, each stage reweights the
/// pooled draws of every stage so far and adapts on a resample of the pool.
pub fn run_amis<T, R>(
    target: &mut T,
    theta1: MixtureParams,
    cfg: &TamisConfig,
    rng: &mut R,
) -> std::result::Result<RunResult, RunFailure>
where
    T: Target + ?Sized,
    R: Rng + ?Sized,
{
    run_impl(target, theta1, cfg, rng, Flavor::Amis)
}

/// N-PMC baseline: the fixed sigmoid temperature ladder centered at `ell`
/// replaces calibration, with no anti-truncation.
pub fn run_npmc<T, R>(
    target: &mut T,
    theta1: MixtureParams,
    cfg: &TamisConfig,
    rng: &mut R,
    ell: f64,
) -> std::result::Result<RunResult, RunFailure>
where
    T: Target + ?Sized,
    R: Rng + ?Sized,
{
    run_impl(target, theta1, cfg, rng, Flavor::Npmc { ell })
}

#[derive(Clone, Copy)]
enum Flavor {
    Tamis,
    Amis,
    Npmc { ell: f64 },
}

fn fail(error: Error, partial: Vec<IterationRecord>) -> RunFailure {
    RunFailure { error, partial }
}

fn run_impl<T, R>(
    target: &mut T,
    theta1: MixtureParams,
    cfg: &TamisConfig,
    rng: &mut R,
    flavor: Flavor,
) -> std::result::Result<RunResult, RunFailure>
where
    T: Target + ?Sized,
    R: Rng + ?Sized,
{
    if let Err(e) = cfg.validate(&theta1) {
        return Err(fail(e, vec![]));
    }
    if let Flavor::Npmc { ell } = flavor {
        if !ell.is_finite() {
            return Err(fail(
                Error::InvalidConfig(format!("ladder center must be finite, got {ell}")),
                vec![],
            ));
        }
    }
    if theta1.dim() != target.dim() {
        return Err(fail(
            Error::DimensionMismatch {
                expected: target.dim(),
                got: theta1.dim(),
            },
            vec![],
        ));
    }

    let mut records: Vec<IterationRecord> = Vec::new();
    let mut theta = theta1;
    let mut cum_ess = 0.0;
    let mut evals: u64 = 0;

    for t in 1..=cfg.max_iterations {
        let n_t = cfg.n_per_stage.at(t);
        let draws = match theta.sample(n_t, rng) {
            Ok(b) => b.with_source_stage(t),
            Err(e) => return Err(fail(e, records)),
        };
        let mut log_pi = Vec::with_capacity(n_t);
        for i in 0..n_t {
            let wrap = |e: Error| Error::TargetEval {
                stage: t,
                particle: i,
                source: Box::new(e),
            };
            match target.log_density(draws.row(i)) {
                Ok(v) if v.is_nan() || v == f64::INFINITY => {
                    let e = wrap(Error::NonFinite(format!("target log-density {v}")));
                    return Err(fail(e, records));
                }
                Ok(v) => log_pi.push(v),
                Err(e) => return Err(fail(wrap(e), records)),
            }
        }
        evals += n_t as u64;

        let log_w = match flavor {
            Flavor::Amis => {
                let mut ds: Vec<&SampleBatch> = records.iter().map(|r| &r.draws).collect();
                ds.push(&draws);
                let mut qs: Vec<&MixtureParams> = records.iter().map(|r| &r.theta).collect();
                qs.push(&theta);
                let mut ps: Vec<&[f64]> = records.iter().map(|r| r.log_pi.as_slice()).collect();
                ps.push(&log_pi);
                match recycle_weights_refs(&ds, &qs, &ps) {
                    Ok(b) => b,
                    Err(e) => return Err(fail(e, records)),
                }
            }
            _ => {
                let log_q = match theta.log_density_batch(&draws) {
                    Ok(v) => v,
                    Err(e) => return Err(fail(e, records)),
                };
                match log_weights(&log_pi, &log_q) {
                    Ok(b) => b,
                    Err(e) => return Err(fail(e, records)),
                }
            }
        };
        let ess_t = log_w.ess();
        let kl_hat_t = kl_hat(&log_w.normalized());
        // AMIS pools all draws, so its stage ESS is already cumulative.
        let stop_metric = match flavor {
            Flavor::Amis => ess_t,
            _ => {
                cum_ess += ess_t;
                cum_ess
            }
        };

        let reached = stop_metric > cfg.ess_predefined;
        if reached || t == cfg.max_iterations {
            records.push(IterationRecord {
                t,
                theta,
                draws,
                log_pi,
                log_w,
                ess_t,
                beta_t: 1.0,
                s_log_t: f64::NEG_INFINITY,
                kl_hat_t,
                n_target_evals: evals,
            });
            let final_log_w = match flavor {
                Flavor::Amis => records.last().expect("just pushed").log_w.clone(),
                _ => {
                    let ds: Vec<&SampleBatch> = records.iter().map(|r| &r.draws).collect();
                    let qs: Vec<&MixtureParams> = records.iter().map(|r| &r.theta).collect();
                    let ps: Vec<&[f64]> = records.iter().map(|r| r.log_pi.as_slice()).collect();
                    match recycle_weights_refs(&ds, &qs, &ps) {
                        Ok(b) => b,
                        Err(e) => return Err(fail(e, records)),
                    }
                }
            };
            let final_ess = final_log_w.ess();
            return Ok(RunResult {
                records,
                final_log_w,
                final_ess,
                stop_reason: if reached {
                    StopReason::CumulativeEss
                } else {
                    StopReason::MaxIterations
                },
                n_target_evals: evals,
            });
        }

        let (beta, tau) = match flavor {
            Flavor::Tamis => {
                match log_w.calibrate_beta(cfg.ess_min, cfg.bisection_tol) {
                    Ok(b) => (b, cfg.tau),
                    Err(e) => return Err(fail(e, records)),
                }
            }
            Flavor::Amis => (1.0, 0.0),
            Flavor::Npmc { ell } => (npmc_beta(t, ell), 0.0),
        };
        let tr = match log_w.anti_truncate(beta, tau) {
            Ok(v) => v,
            Err(e) => return Err(fail(e, records)),
        };
        let idx = match resample(&tr.log_w_hat, n_t, cfg.resampling, rng) {
            Ok(v) => v,
            Err(e) => return Err(fail(e, records)),
        };
        let data = match flavor {
            Flavor::Amis => gather_pooled(&records, &draws, &idx),
            _ => draws.gather(&idx),
        };
        let data = match data {
            Ok(d) => d,
            Err(e) => return Err(fail(e, records)),
        };
        records.push(IterationRecord {
            t,
            theta: theta.clone(),
            draws,
            log_pi,
            log_w,
            ess_t,
            beta_t: beta,
            s_log_t: tr.s_log,
            kl_hat_t,
            n_target_evals: evals,
        });
        match em_fit(&theta, &data, &cfg.em) {
            Ok(f) => theta = f.params,
            Err(e) => return Err(fail(e, records)),
        }
    }
    unreachable!("the loop returns at t == max_iterations")
}

/// Rows of the pooled particle set (past stages then the current draws) at
/// the given pooled indices.
fn gather_pooled(
    past: &[IterationRecord],
    current: &SampleBatch,
    indices: &[usize],
) -> Result<SampleBatch> {
    let mut batches: Vec<&SampleBatch> = past.iter().map(|r| &r.draws).collect();
    batches.push(current);
    let mut prefix = vec![0usize];
    for b in &batches {
        prefix.push(prefix.last().unwrap() + b.len());
    }
    let d = current.dim();
    let mut points = Vec::with_capacity(indices.len() * d);
    for &g in indices {
        let s = prefix.partition_point(|p| *p <= g) - 1;
        if s >= batches.len() {
            return Err(Error::InvalidParams(format!(
                "pooled index {g} out of range {}",
                prefix.last().unwrap()
            )));
        }
        points.extend_from_slice(batches[s].row(g - prefix[s]));
    }
    SampleBatch::new(points, d, current.source_stage())
}
