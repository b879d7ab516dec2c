//! Quadrature oracle: independent 1-D checks of the identities the sampler
//! rests on, computed by trapezoid integration on dense grids rather than by
//! the sampler's own code paths. For integrands that decay like Gaussians
//! well inside the grid, the trapezoid rule is accurate to far below the
//! tolerances asserted here.

use crate::math::{log_sum_exp, LN_2PI};
use crate::weights::LogWeightBatch;
use crate::{Error, Result};

/// Uniform 1-D grid with `n` nodes including both endpoints.
#[derive(Debug, Clone, Copy)]
pub struct Grid1d {
    lo: f64,
    hi: f64,
    n: usize,
}

impl Grid1d {
    pub const DEFAULT_N: usize = 1 << 16;

    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::InvalidParams(format!(
                "grid needs finite lo < hi, got [{lo}, {hi}]"
            )));
        }
        if n < 8 {
            return Err(Error::InvalidParams(format!("grid needs >= 8 nodes, got {n}")));
        }
        Ok(Grid1d { lo, hi, n })
    }

    /// Grid covering every listed (mean, sd) out to 12 standard deviations,
    /// far enough that the neglected tails are below f64 resolution.
    pub fn spanning_gaussians(moments: &[(f64, f64)], n: usize) -> Result<Self> {
        if moments.is_empty() {
            return Err(Error::InvalidParams("no gaussians to span".into()));
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &(m, sd) in moments {
            if !(m.is_finite() && sd.is_finite() && sd > 0.0) {
                return Err(Error::InvalidParams(format!(
                    "bad gaussian moments ({m}, {sd})"
                )));
            }
            lo = lo.min(m - 12.0 * sd);
            hi = hi.max(m + 12.0 * sd);
        }
        Grid1d::new(lo, hi, n)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn h(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        self.lo + self.h() * i as f64
    }
}

fn eval_log(f: &impl Fn(f64) -> f64, grid: &Grid1d) -> Result<Vec<f64>> {
    (0..grid.len())
        .map(|i| {
            let x = grid.node(i);
            let v = f(x);
            if v.is_nan() || v == f64::INFINITY {
                Err(Error::NonFinite(format!(
                    "log-integrand is {v} at node {i} (x = {x})"
                )))
            } else {
                Ok(v)
            }
        })
        .collect()
}

/// Log of the trapezoid integral of exp(log_f) over the grid.
fn log_trapezoid(log_f: &[f64], grid: &Grid1d) -> f64 {
    let ln_h = grid.h().ln();
    let ln_half = 0.5f64.ln();
    let last = log_f.len() - 1;
    let adjusted: Vec<f64> = log_f
        .iter()
        .enumerate()
        .map(|(i, &v)| v + ln_h + if i == 0 || i == last { ln_half } else { 0.0 })
        .collect();
    log_sum_exp(&adjusted)
}

/// KL divergence between the densities proportional to exp(log_p) and
/// exp(log_q), each normalized by its own trapezoid integral. +inf when p
/// puts mass where q has none; small negative values (rounding) are
/// possible and left unclamped.
fn kl_from_values(log_p: &[f64], log_q: &[f64], grid: &Grid1d) -> f64 {
    debug_assert_eq!(log_p.len(), log_q.len());
    let zp = log_trapezoid(log_p, grid);
    let zq = log_trapezoid(log_q, grid);
    let ln_h = grid.h().ln();
    let ln_half = 0.5f64.ln();
    let last = log_p.len() - 1;
    let mut kl = 0.0;
    for i in 0..log_p.len() {
        let lc = ln_h + if i == 0 || i == last { ln_half } else { 0.0 };
        let w = (log_p[i] + lc - zp).exp();
        if w > 0.0 {
            kl += w * ((log_p[i] - zp) - (log_q[i] - zq));
        }
    }
    kl
}

/// KL(p || q) by quadrature of the given log-densities (either may be
/// unnormalized).
pub fn quad_kl(
    log_p: impl Fn(f64) -> f64,
    log_q: impl Fn(f64) -> f64,
    grid: &Grid1d,
) -> Result<f64> {
    let lp = eval_log(&log_p, grid)?;
    let lq = eval_log(&log_q, grid)?;
    Ok(kl_from_values(&lp, &lq, grid))
}

/// log(p^beta q^(1-beta)) with the zero-density conventions that make the
/// geometric path well defined at the endpoints.
fn combine(lp: f64, lq: f64, beta: f64) -> f64 {
    if beta == 0.0 {
        lq
    } else if beta == 1.0 {
        lp
    } else if lp == f64::NEG_INFINITY || lq == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        beta * lp + (1.0 - beta) * lq
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidParams(format!(
            "beta must lie in [0, 1], got {beta}"
        )));
    }
    Ok(())
}

/// Normalization constant C(beta) of the geometric path between the
/// normalized versions of the two densities. Equals 1 at both endpoints and
/// never exceeds 1 in between.
pub fn tempered_constant(
    log_p: impl Fn(f64) -> f64,
    log_q: impl Fn(f64) -> f64,
    beta: f64,
    grid: &Grid1d,
) -> Result<f64> {
    check_beta(beta)?;
    let lp = eval_log(&log_p, grid)?;
    let lq = eval_log(&log_q, grid)?;
    let zp = log_trapezoid(&lp, grid);
    let zq = log_trapezoid(&lq, grid);
    let t: Vec<f64> = lp
        .iter()
        .zip(&lq)
        .map(|(&a, &b)| combine(a - zp, b - zq, beta))
        .collect();
    Ok(log_trapezoid(&t, grid).exp())
}

/// KL(p || pi_beta) along the geometric path, one value per requested beta.
/// Non-increasing and convex in beta, from KL(p || q) at 0 down to 0 at 1.
pub fn kl_beta_curve(
    log_p: impl Fn(f64) -> f64,
    log_q: impl Fn(f64) -> f64,
    betas: &[f64],
    grid: &Grid1d,
) -> Result<Vec<f64>> {
    for &b in betas {
        check_beta(b)?;
    }
    let lp = eval_log(&log_p, grid)?;
    let lq = eval_log(&log_q, grid)?;
    Ok(betas
        .iter()
        .map(|&b| {
            let t: Vec<f64> = lp.iter().zip(&lq).map(|(&a, &c)| combine(a, c, b)).collect();
            kl_from_values(&lp, &t, grid)
        })
        .collect())
}

/// Normalized log-densities, the geometric path between them, and the
/// anti-truncated density max(s * q, p^beta q^(1-beta)) with its split into
/// the clipped region E = {(p/q)^beta <= s} and its complement.
struct HatDensities {
    lq: Vec<f64>,
    tempered: Vec<f64>,
    hat: Vec<f64>,
    in_e: Vec<bool>,
}

fn build_hat(raw_lp: &[f64], raw_lq: &[f64], beta: f64, s: f64, grid: &Grid1d) -> HatDensities {
    let zp = log_trapezoid(raw_lp, grid);
    let zq = log_trapezoid(raw_lq, grid);
    let ln_s = s.ln();
    let n = raw_lp.len();
    let mut lq = Vec::with_capacity(n);
    let mut tempered = Vec::with_capacity(n);
    let mut hat = Vec::with_capacity(n);
    let mut in_e = Vec::with_capacity(n);
    for i in 0..n {
        let lp_i = raw_lp[i] - zp;
        let lq_i = raw_lq[i] - zq;
        let t = combine(lp_i, lq_i, beta);
        // Zero densities sort themselves: p = 0 means the ratio is 0 (in E),
        // q = 0 with p > 0 means it is infinite (outside E).
        let e = if lp_i == f64::NEG_INFINITY {
            true
        } else if lq_i == f64::NEG_INFINITY {
            false
        } else {
            beta * (lp_i - lq_i) <= ln_s
        };
        lq.push(lq_i);
        tempered.push(t);
        hat.push(if e { ln_s + lq_i } else { t });
        in_e.push(e);
    }
    HatDensities {
        lq,
        tempered,
        hat,
        in_e,
    }
}

fn check_s(s: f64) -> Result<()> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "threshold s must be positive and finite, got {s}"
        )));
    }
    Ok(())
}

/// The mixture coefficient of the anti-truncated density computed two ways:
/// directly as s * integral(q over E) / Z, and as the complement
/// 1 - integral(tempered over not-E) / Z. The two agree exactly in exact
/// arithmetic; their gap measures the mixture decomposition.
pub fn lambda_mixture(
    log_p: impl Fn(f64) -> f64,
    log_q: impl Fn(f64) -> f64,
    beta: f64,
    s: f64,
    grid: &Grid1d,
) -> Result<(f64, f64)> {
    check_beta(beta)?;
    check_s(s)?;
    let lp = eval_log(&log_p, grid)?;
    let lq = eval_log(&log_q, grid)?;
    let hd = build_hat(&lp, &lq, beta, s, grid);
    let lz = log_trapezoid(&hd.hat, grid);
    let restrict = |vals: &[f64], keep: bool| -> Vec<f64> {
        vals.iter()
            .zip(&hd.in_e)
            .map(|(&v, &e)| if e == keep { v } else { f64::NEG_INFINITY })
            .collect()
    };
    let li_eq = log_trapezoid(&restrict(&hd.lq, true), grid);
    let li_ebar = log_trapezoid(&restrict(&hd.tempered, false), grid);
    let left = if li_eq == f64::NEG_INFINITY {
        0.0
    } else {
        (s.ln() + li_eq - lz).exp()
    };
    let right = 1.0
        - if li_ebar == f64::NEG_INFINITY {
            0.0
        } else {
            (li_ebar - lz).exp()
        };
    Ok((left, right))
}

/// L1 distance between the normalized anti-truncated density and its
/// two-component mixture form lambda * (q restricted to E) +
/// (1 - lambda) * (tempered restricted to the complement).
pub fn mixture_decomposition_l1(
    log_p: impl Fn(f64) -> f64,
    log_q: impl Fn(f64) -> f64,
    beta: f64,
    s: f64,
    grid: &Grid1d,
) -> Result<f64> {
    check_beta(beta)?;
    check_s(s)?;
    let lp = eval_log(&log_p, grid)?;
    let lq = eval_log(&log_q, grid)?;
    let hd = build_hat(&lp, &lq, beta, s, grid);
    let lz = log_trapezoid(&hd.hat, grid);
    let restrict = |vals: &[f64], keep: bool| -> Vec<f64> {
        vals.iter()
            .zip(&hd.in_e)
            .map(|(&v, &e)| if e == keep { v } else { f64::NEG_INFINITY })
            .collect()
    };
    let li_eq = log_trapezoid(&restrict(&hd.lq, true), grid);
    let li_ebar = log_trapezoid(&restrict(&hd.tempered, false), grid);
    let lambda = if li_eq == f64::NEG_INFINITY {
        0.0
    } else {
        (s.ln() + li_eq - lz).exp()
    };

    let ln_h = grid.h().ln();
    let ln_half = 0.5f64.ln();
    let last = hd.hat.len() - 1;
    let mut l1 = 0.0;
    for i in 0..hd.hat.len() {
        let c = (ln_h + if i == 0 || i == last { ln_half } else { 0.0 }).exp();
        let lhs = (hd.hat[i] - lz).exp();
        let rhs = if hd.in_e[i] {
            if li_eq == f64::NEG_INFINITY {
                0.0
            } else {
                lambda * (hd.lq[i] - li_eq).exp()
            }
        } else if li_ebar == f64::NEG_INFINITY {
            0.0
        } else {
            (1.0 - lambda) * (hd.tempered[i] - li_ebar).exp()
        };
        l1 += c * (lhs - rhs).abs();
    }
    Ok(l1)
}

/// Both sides of the divergence sandwich around the anti-truncated density:
/// 0 <= KL(pi_beta || hat) <= KL(pi_beta || q) whenever s <= 1.
#[derive(Debug, Clone, Copy)]
pub struct SandwichCheck {
    pub kl_tempered_to_hat: f64,
    pub kl_tempered_to_q: f64,
}

pub fn kl_sandwich_check(
    log_p: impl Fn(f64) -> f64,
    log_q: impl Fn(f64) -> f64,
    beta: f64,
    s: f64,
    grid: &Grid1d,
) -> Result<SandwichCheck> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidParams(format!(
            "sandwich needs beta in (0, 1], got {beta}"
        )));
    }
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::InvalidParams(format!(
            "sandwich needs s in (0, 1], got {s}"
        )));
    }
    let lp = eval_log(&log_p, grid)?;
    let lq = eval_log(&log_q, grid)?;
    let hd = build_hat(&lp, &lq, beta, s, grid);
    Ok(SandwichCheck {
        kl_tempered_to_hat: kl_from_values(&hd.tempered, &hd.hat, grid),
        kl_tempered_to_q: kl_from_values(&hd.tempered, &hd.lq, grid),
    })
}

/// One named oracle verdict.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn ln_gauss(m: f64, sd: f64) -> impl Fn(f64) -> f64 + Copy {
    move |x: f64| {
        let z = (x - m) / sd;
        -0.5 * (LN_2PI + 2.0 * sd.ln() + z * z)
    }
}

fn closed_kl(mp: f64, sp: f64, mq: f64, sq: f64) -> f64 {
    (sq / sp).ln() + (sp * sp + (mp - mq) * (mp - mq)) / (2.0 * sq * sq) - 0.5
}

/// (mean_p, sd_p, mean_q, sd_q) for the reference density pairs.
const PAIRS: [(f64, f64, f64, f64); 3] = [
    (0.0, 1.0, 1.0, 1.0),
    (0.0, 1.0, 0.0, 2.0),
    (1.0, 0.6, -1.0, 1.5),
];

fn pair_grid(p: (f64, f64, f64, f64)) -> Grid1d {
    Grid1d::spanning_gaussians(&[(p.0, p.1), (p.2, p.3)], Grid1d::DEFAULT_N).expect("pair grid")
}

fn beta_grid(n: usize) -> Vec<f64> {
    (0..=n).map(|j| j as f64 / n as f64).collect()
}

/// Runs every oracle check with fixed inputs and seeds. Deterministic; the
/// suite takes on the order of a second.
pub fn run_appendix_checks() -> Vec<CheckOutcome> {
    let mut out = Vec::new();

    // Quadrature KL against the closed form for Gaussian pairs.
    {
        let mut worst = 0.0f64;
        for &p in &PAIRS {
            let grid = pair_grid(p);
            let kl = quad_kl(ln_gauss(p.0, p.1), ln_gauss(p.2, p.3), &grid).expect("quad_kl");
            worst = worst.max((kl - closed_kl(p.0, p.1, p.2, p.3)).abs());
        }
        out.push(CheckOutcome {
            name: "kl_quadrature_closed_form",
            passed: worst < 1e-9,
            detail: format!("max |quad - closed form| = {worst:.2e} over {} pairs", PAIRS.len()),
        });
    }

    // C(beta) <= 1 with equality at both endpoints.
    {
        let mut worst_excess = f64::NEG_INFINITY;
        let mut worst_endpoint = 0.0f64;
        for &p in &PAIRS {
            let grid = pair_grid(p);
            for &b in &beta_grid(20) {
                let c = tempered_constant(ln_gauss(p.0, p.1), ln_gauss(p.2, p.3), b, &grid)
                    .expect("tempered_constant");
                worst_excess = worst_excess.max(c - 1.0);
                if b == 0.0 || b == 1.0 {
                    worst_endpoint = worst_endpoint.max((c - 1.0).abs());
                }
            }
        }
        out.push(CheckOutcome {
            name: "tempered_constant_bounds",
            passed: worst_excess <= 1e-9 && worst_endpoint <= 1e-6,
            detail: format!(
                "max C - 1 = {worst_excess:.2e}, endpoint |C - 1| = {worst_endpoint:.2e}"
            ),
        });
    }

    // KL(p || pi_beta): starts at KL(p || q), falls monotonically and
    // convexly to 0.
    {
        let betas = beta_grid(20);
        let mut worst_end = 0.0f64;
        let mut worst_monot = f64::NEG_INFINITY;
        let mut worst_convex = f64::INFINITY;
        for &p in &PAIRS {
            let grid = pair_grid(p);
            let curve = kl_beta_curve(ln_gauss(p.0, p.1), ln_gauss(p.2, p.3), &betas, &grid)
                .expect("kl_beta_curve");
            let kl_pq = quad_kl(ln_gauss(p.0, p.1), ln_gauss(p.2, p.3), &grid).expect("quad_kl");
            worst_end = worst_end.max((curve[0] - kl_pq).abs()).max(curve[20].abs());
            for w in curve.windows(2) {
                worst_monot = worst_monot.max(w[1] - w[0]);
            }
            for w in curve.windows(3) {
                worst_convex = worst_convex.min(w[2] - 2.0 * w[1] + w[0]);
            }
        }
        out.push(CheckOutcome {
            name: "kl_beta_curve_shape",
            passed: worst_end < 1e-9 && worst_monot <= 1e-9 && worst_convex >= -1e-8,
            detail: format!(
                "endpoint error {worst_end:.2e}, max increment {worst_monot:.2e}, \
                 min second difference {worst_convex:.2e}"
            ),
        });
    }

    // Independent identity: KL(p || pi_beta) = (1 - beta) KL(p || q) + ln C(beta).
    {
        let betas = beta_grid(10);
        let mut worst = 0.0f64;
        for &p in &PAIRS {
            let grid = pair_grid(p);
            let curve = kl_beta_curve(ln_gauss(p.0, p.1), ln_gauss(p.2, p.3), &betas, &grid)
                .expect("kl_beta_curve");
            let kl_pq = quad_kl(ln_gauss(p.0, p.1), ln_gauss(p.2, p.3), &grid).expect("quad_kl");
            for (j, &b) in betas.iter().enumerate() {
                let c = tempered_constant(ln_gauss(p.0, p.1), ln_gauss(p.2, p.3), b, &grid)
                    .expect("tempered_constant");
                worst = worst.max((curve[j] - ((1.0 - b) * kl_pq + c.ln())).abs());
            }
        }
        out.push(CheckOutcome {
            name: "kl_beta_identity",
            passed: worst < 1e-8,
            detail: format!("max |curve - ((1-beta) KL + ln C)| = {worst:.2e}"),
        });
    }

    // Divergence sandwich for s <= 1.
    {
        let mut worst_lower = 0.0f64;
        let mut worst_upper = f64::NEG_INFINITY;
        let mut cases = 0usize;
        for &p in &PAIRS {
            let grid = pair_grid(p);
            for &beta in &[0.3, 0.6, 0.9, 1.0] {
                for &s in &[1e-12, 0.1, 0.5, 1.0] {
                    let sw =
                        kl_sandwich_check(ln_gauss(p.0, p.1), ln_gauss(p.2, p.3), beta, s, &grid)
                            .expect("kl_sandwich_check");
                    worst_lower = worst_lower.min(sw.kl_tempered_to_hat);
                    worst_upper = worst_upper.max(sw.kl_tempered_to_hat - sw.kl_tempered_to_q);
                    cases += 1;
                }
            }
        }
        out.push(CheckOutcome {
            name: "kl_sandwich",
            passed: worst_lower >= -1e-12 && worst_upper <= 1e-6,
            detail: format!(
                "{cases} cases, min KL(t||hat) = {worst_lower:.2e}, \
                 max KL(t||hat) - KL(t||q) = {worst_upper:.2e}"
            ),
        });
    }

    // Mixture coefficient identity and the decomposition itself.
    {
        let mut worst_gap = 0.0f64;
        let mut worst_l1 = 0.0f64;
        for &p in &PAIRS {
            let grid = pair_grid(p);
            let lp = eval_log(&ln_gauss(p.0, p.1), &grid).expect("eval p");
            let lq = eval_log(&ln_gauss(p.2, p.3), &grid).expect("eval q");
            let zp = log_trapezoid(&lp, &grid);
            let zq = log_trapezoid(&lq, &grid);
            for &beta in &[0.3, 0.6, 0.9] {
                let mut ratio: Vec<f64> = lp
                    .iter()
                    .zip(&lq)
                    .map(|(&a, &b)| beta * ((a - zp) - (b - zq)))
                    .collect();
                ratio.sort_unstable_by(f64::total_cmp);
                let median = ratio[ratio.len() / 2];
                for s in [median.exp(), (ratio[0] - 1.0).exp(), (ratio[ratio.len() - 1] + 1.0).exp()]
                {
                    let (l, r) =
                        lambda_mixture(ln_gauss(p.0, p.1), ln_gauss(p.2, p.3), beta, s, &grid)
                            .expect("lambda_mixture");
                    worst_gap = worst_gap.max((l - r).abs());
                    let l1 = mixture_decomposition_l1(
                        ln_gauss(p.0, p.1),
                        ln_gauss(p.2, p.3),
                        beta,
                        s,
                        &grid,
                    )
                    .expect("mixture_decomposition_l1");
                    worst_l1 = worst_l1.max(l1);
                }
            }
        }
        out.push(CheckOutcome {
            name: "lambda_identity",
            passed: worst_gap < 1e-9,
            detail: format!("max |lambda_direct - lambda_complement| = {worst_gap:.2e}"),
        });
        out.push(CheckOutcome {
            name: "mixture_decomposition",
            passed: worst_l1 < 1e-9,
            detail: format!("max L1(hat, mixture form) = {worst_l1:.2e}"),
        });
    }

    // ESS(beta) is non-increasing on [0, 1] and stays inside [1, #finite],
    // across a seeded spread of weight regimes (normal, heavy-tailed,
    // constant, with and without zero weights).
    {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(20260817);
        let mut worst_increase = f64::NEG_INFINITY;
        let mut bounds_ok = true;
        let cases = 200usize;
        for case in 0..cases {
            let ln_n = rng.gen_range((2f64).ln()..(2000f64).ln());
            let n = (ln_n.exp().round() as usize).clamp(2, 2000);
            let mut lw: Vec<f64> = match case % 3 {
                0 => {
                    let sigma = 10f64.powf(rng.gen_range(-2.0..2.0));
                    (0..n)
                        .map(|_| sigma * rng.sample::<f64, _>(rand_distr::StandardNormal))
                        .collect()
                }
                1 => {
                    let scale = 10f64.powf(rng.gen_range(0.0..3.0));
                    (0..n).map(|_| scale * rng.gen::<f64>().ln()).collect()
                }
                _ => vec![rng.gen_range(-5.0..5.0); n],
            };
            if case % 3 == 2 || rng.gen::<f64>() < 0.3 {
                let kill = (n / 10).clamp(1, n - 1);
                for slot in lw.iter_mut().take(kill) {
                    *slot = f64::NEG_INFINITY;
                }
            }
            let batch = LogWeightBatch::new(lw).expect("seeded batch");
            let n_finite = batch.ess_at_beta(0.0);
            let mut prev = f64::INFINITY;
            for j in 0..=50 {
                let e = batch.ess_at_beta(j as f64 / 50.0);
                if !(e >= 1.0 - 1e-12 && e <= n_finite + 1e-9 * n as f64) {
                    bounds_ok = false;
                }
                if prev.is_finite() {
                    worst_increase = worst_increase.max((e - prev) / n as f64);
                }
                prev = e;
            }
        }
        out.push(CheckOutcome {
            name: "ess_monotonicity",
            passed: worst_increase <= 1e-9 && bounds_ok,
            detail: format!(
                "{cases} seeded batches, max normalized increase = {worst_increase:.2e}, \
                 bounds {}",
                if bounds_ok { "held" } else { "violated" }
            ),
        });
    }

    out
}
