//! Replicate orchestration and report files: per-run trace CSVs, the
//! aggregate CSV, the diagnostic SVG charts, and optional particle dumps.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use tamis::engine::{
    run_amis, run_npmc, run_tamis, write_records_csv, IterationRecord, RunResult,
};

use crate::config::{AlgorithmSpec, ExperimentConfig};
use crate::svg;

pub struct RunOptions {
    pub out_dir: PathBuf,
    pub workers: Option<usize>,
    pub dump_particles: bool,
}

/// One aggregate row. Failed replicates keep whatever the partial trace
/// established (stages completed, evaluations through the last full stage)
/// and leave the estimate columns empty.
struct ReplicateRow {
    replicate: u64,
    seed: u64,
    ok: bool,
    status: String,
    stop_reason: String,
    iterations: usize,
    final_ess: Option<f64>,
    sq_err_mean: Option<f64>,
    sq_err_var_trace: Option<f64>,
    convergence_iter: Option<usize>,
    n_target_evals: u64,
    beta: Vec<(f64, f64)>,
    kl: Vec<(f64, f64)>,
}

/// Runs every replicate, writes all report files, and returns whether every
/// replicate succeeded.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<bool> {
    fs::create_dir_all(&opts.out_dir)
        .with_context(|| format!("creating {}", opts.out_dir.display()))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.unwrap_or(0))
        .build()
        .context("building worker pool")?;
    let rows: Vec<ReplicateRow> = pool.install(|| {
        (0..cfg.replicates)
            .into_par_iter()
            .map(|r| run_replicate(cfg, opts, r))
            .collect()
    });

    write_aggregate(&opts.out_dir.join("aggregate.csv"), &rows)?;

    let beta_series: Vec<Vec<(f64, f64)>> = rows.iter().map(|r| r.beta.clone()).collect();
    let kl_series: Vec<Vec<(f64, f64)>> = rows.iter().map(|r| r.kl.clone()).collect();
    let title = |what: &str| format!("{} / {}", cfg.experiment, what);
    fs::write(
        opts.out_dir.join("beta.svg"),
        svg::line_chart(&title("inverse temperature"), "beta_t", &beta_series),
    )?;
    fs::write(
        opts.out_dir.join("kl_hat.svg"),
        svg::line_chart(&title("divergence estimate"), "kl_hat_t", &kl_series),
    )?;

    for row in rows.iter().filter(|r| !r.ok) {
        eprintln!("replicate {} (seed {}): {}", row.replicate, row.seed, row.status);
    }
    Ok(rows.iter().all(|r| r.ok))
}

fn run_replicate(cfg: &ExperimentConfig, opts: &RunOptions, r: u64) -> ReplicateRow {
    let seed = cfg.seed.wrapping_add(r);
    let mut row = ReplicateRow {
        replicate: r,
        seed,
        ok: false,
        status: String::new(),
        stop_reason: String::new(),
        iterations: 0,
        final_ess: None,
        sq_err_mean: None,
        sq_err_var_trace: None,
        convergence_iter: None,
        n_target_evals: 0,
        beta: Vec::new(),
        kl: Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta1 = match cfg.build_proposal(&mut rng) {
        Ok(t) => t,
        Err(e) => {
            row.status = format!("failed: {e:#}");
            return row;
        }
    };
    let mut target = match cfg.build_target() {
        Ok(t) => t,
        Err(e) => {
            row.status = format!("failed: {e:#}");
            return row;
        }
    };
    let tamis_cfg = cfg.tamis_config();
    let result = match cfg.algorithm {
        AlgorithmSpec::Tamis => run_tamis(target.as_mut(), theta1, &tamis_cfg, &mut rng),
        AlgorithmSpec::Amis => run_amis(target.as_mut(), theta1, &tamis_cfg, &mut rng),
        AlgorithmSpec::Npmc { ladder_center } => {
            run_npmc(target.as_mut(), theta1, &tamis_cfg, &mut rng, ladder_center)
        }
    };

    match result {
        Ok(run) => {
            row.ok = true;
            row.status = "ok".into();
            row.stop_reason = run.stop_reason.to_string();
            row.iterations = run.iterations();
            row.final_ess = Some(run.final_ess);
            row.n_target_evals = run.n_target_evals;
            row.convergence_iter = run
                .records
                .iter()
                .position(|rec| rec.kl_hat_t < 1.0)
                .map(|i| i + 1);
            if let Some((true_mean, true_trace)) = cfg.true_moments() {
                let (m, v) = moment_errors(&run, cfg.dim(), true_mean, true_trace);
                row.sq_err_mean = Some(m);
                row.sq_err_var_trace = Some(v);
            }
            (row.beta, row.kl) = diag_traces(&run.records);
            if let Err(e) = write_run_files(opts, r, &run) {
                row.ok = false;
                row.status = format!("failed: {e:#}");
            }
        }
        Err(f) => {
            row.status = format!("failed: {}", f.error);
            row.iterations = f.partial.len();
            row.n_target_evals = f.partial.last().map_or(0, |rec| rec.n_target_evals);
            (row.beta, row.kl) = diag_traces(&f.partial);
            if let Err(e) = write_trace(&trace_path(&opts.out_dir, r), &f.partial) {
                row.status.push_str(&format!("; trace not written: {e:#}"));
            }
        }
    }
    row
}

fn diag_traces(records: &[IterationRecord]) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
    let beta = records.iter().map(|r| (r.t as f64, r.beta_t)).collect();
    let kl = records.iter().map(|r| (r.t as f64, r.kl_hat_t)).collect();
    (beta, kl)
}

/// Mean squared error across coordinates of the self-normalized mean, and
/// the squared error of the covariance-trace estimate.
fn moment_errors(run: &RunResult, d: usize, true_mean: f64, true_trace: f64) -> (f64, f64) {
    let w = run.final_log_w.normalized();
    let mut mean = vec![0.0; d];
    for (x, &wi) in run.particle_rows().zip(w.iter()) {
        for j in 0..d {
            mean[j] += wi * x[j];
        }
    }
    let mut trace = 0.0;
    for (x, &wi) in run.particle_rows().zip(w.iter()) {
        for j in 0..d {
            let c = x[j] - mean[j];
            trace += wi * c * c;
        }
    }
    let sq_mean = mean
        .iter()
        .map(|m| (m - true_mean) * (m - true_mean))
        .sum::<f64>()
        / d as f64;
    let sq_trace = (trace - true_trace) * (trace - true_trace);
    (sq_mean, sq_trace)
}

fn trace_path(dir: &Path, r: u64) -> PathBuf {
    dir.join(format!("trace_r{r}.csv"))
}

fn write_trace(path: &Path, records: &[IterationRecord]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_records_csv(records, BufWriter::new(file))?;
    Ok(())
}

fn write_run_files(opts: &RunOptions, r: u64, run: &RunResult) -> Result<()> {
    write_trace(&trace_path(&opts.out_dir, r), &run.records)?;
    if !opts.dump_particles {
        return Ok(());
    }

    let path = opts.out_dir.join(format!("particles_r{r}.csv"));
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    let d = run.records[0].draws.dim();
    write!(out, "stage,log_w,weight")?;
    for j in 1..=d {
        write!(out, ",x{j}")?;
    }
    writeln!(out)?;
    let weights = run.final_log_w.normalized();
    let mut rows = run.particle_rows();
    let mut i = 0usize;
    for rec in &run.records {
        for _ in 0..rec.draws.len() {
            let x = rows.next().expect("row per weight");
            write!(out, "{},{},{}", rec.t, run.final_log_w.log_w()[i], weights[i])?;
            for v in x {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
            i += 1;
        }
    }
    out.flush()?;

    let path = opts.out_dir.join(format!("proposals_r{r}.txt"));
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    for rec in &run.records {
        writeln!(out, "# stage {}", rec.t)?;
        out.write_all(rec.theta.to_text_record().as_bytes())?;
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

fn write_aggregate(path: &Path, rows: &[ReplicateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    w.write_record([
        "replicate",
        "seed",
        "status",
        "stop_reason",
        "iterations",
        "final_ess",
        "sq_err_mean",
        "sq_err_var_trace",
        "convergence_iter",
        "n_target_evals",
    ])?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    for r in rows {
        w.write_record([
            r.replicate.to_string(),
            r.seed.to_string(),
            r.status.clone(),
            r.stop_reason.clone(),
            r.iterations.to_string(),
            opt(r.final_ess.map(|v| v.to_string())),
            opt(r.sq_err_mean.map(|v| v.to_string())),
            opt(r.sq_err_var_trace.map(|v| v.to_string())),
            opt(r.convergence_iter.map(|v| v.to_string())),
            r.n_target_evals.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Renders `beta` and `kl_hat` charts from a trace CSV; returns the paths
/// written.
pub fn plot_trace(trace: &Path, out_dir: Option<&Path>) -> Result<Vec<PathBuf>> {
    let mut reader = csv::Reader::from_path(trace)
        .with_context(|| format!("reading {}", trace.display()))?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("{} has no {name:?} column", trace.display()))
    };
    let (ti, bi, ki) = (col("t")?, col("beta_t")?, col("kl_hat_t")?);
    let mut beta = Vec::new();
    let mut kl = Vec::new();
    for record in reader.records() {
        let record = record?;
        let get = |i: usize| -> Result<f64> {
            record
                .get(i)
                .with_context(|| "short row".to_string())?
                .parse::<f64>()
                .with_context(|| format!("bad float in {}", trace.display()))
        };
        let t = get(ti)?;
        beta.push((t, get(bi)?));
        kl.push((t, get(ki)?));
    }
    if beta.is_empty() {
        bail!("{} contains no data rows", trace.display());
    }

    let stem = trace
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("trace")
        .to_string();
    let dir = match out_dir {
        Some(d) => d.to_path_buf(),
        None => trace.parent().unwrap_or(Path::new(".")).to_path_buf(),
    };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut written = Vec::new();
    for (what, label, series) in [
        ("beta", "beta_t", beta),
        ("kl_hat", "kl_hat_t", kl),
    ] {
        let path = dir.join(format!("{stem}_{what}.svg"));
        fs::write(
            &path,
            svg::line_chart(&format!("{stem} / {what}"), label, &[series]),
        )
        .with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
    }
    Ok(written)
}
