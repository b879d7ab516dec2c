//! Proposal adaptation: resampling of anti-truncated weights and the EM
//! update of the Gaussian mixture on the resampled (unweighted) points.

use crate::math::log_sum_exp;
use crate::model::{MixtureParams, SampleBatch};
use crate::{Error, Result};
use rand::Rng;

/// Variance floor, relative to the largest variance of the proposal a given
/// EM call starts from. Keeps components from going singular when the
/// resampled set contains near-duplicate points.
pub const VARIANCE_FLOOR_REL: f64 = 1e-10;

/// Responsibility-mass fraction below which a component is declared
/// degenerate and frozen at its previous parameters for the rest of that EM
/// call. The threshold is `K * DEGENERATE_MASS_REL * M` points of mass.
pub const DEGENERATE_MASS_REL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleScheme {
    Systematic,
    Multinomial,
}

/// Draws `m` indices proportional to the given log weights.
///
/// Systematic resampling uses a single uniform offset and guarantees every
/// index a multiplicity in {floor(m w), ceil(m w)}; multinomial draws the
/// indices independently. Both consume the rng deterministically.
pub fn resample<R: Rng + ?Sized>(
    log_w_hat: &[f64],
    m: usize,
    scheme: ResampleScheme,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if m == 0 {
        return Err(Error::InvalidParams("resample size must be >= 1".into()));
    }
    if log_w_hat.is_empty() {
        return Err(Error::InvalidParams("resampling an empty batch".into()));
    }
    if log_w_hat.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::NonFinite("resampling weight".into()));
    }
    let lse = log_sum_exp(log_w_hat);
    if !lse.is_finite() {
        return Err(Error::InvalidParams(
            "resampling weights have no positive entry".into(),
        ));
    }
    let w: Vec<f64> = log_w_hat.iter().map(|lw| (lw - lse).exp()).collect();
    let n = w.len();
    let mut indices = Vec::with_capacity(m);
    match scheme {
        ResampleScheme::Systematic => {
            // u in (0, 1]: a zero offset would shift every position onto a
            // cell boundary and double-select the first index.
            let u: f64 = 1.0 - rng.gen::<f64>();
            let mut j = 0usize;
            let mut cum = w[0];
            for i in 0..m {
                let p = (i as f64 + u) / m as f64;
                while p > cum && j + 1 < n {
                    j += 1;
                    cum += w[j];
                }
                indices.push(j);
            }
        }
        ResampleScheme::Multinomial => {
            let mut cum = Vec::with_capacity(n);
            let mut acc = 0.0;
            for &wi in &w {
                acc += wi;
                cum.push(acc);
            }
            for _ in 0..m {
                let u: f64 = 1.0 - rng.gen::<f64>();
                let k = cum.partition_point(|c| *c < u).min(n - 1);
                indices.push(k);
            }
        }
    }
    Ok(indices)
}

/// EM stopping parameters: at most `max_steps` M-steps, stopping early once
/// the mean log-likelihood improves by less than `rel_tol * max(1, |ll|)`.
#[derive(Debug, Clone, Copy)]
pub struct EmSettings {
    pub max_steps: usize,
    pub rel_tol: f64,
}

impl Default for EmSettings {
    fn default() -> Self {
        EmSettings {
            max_steps: 10,
            rel_tol: 1e-6,
        }
    }
}

/// Result of an EM fit: the updated mixture and the mean log-likelihood
/// trajectory, one entry per evaluated parameter vector (so monotone
/// non-decreasing up to rounding).
#[derive(Debug, Clone)]
pub struct EmFit {
    pub params: MixtureParams,
    pub mean_log_lik: Vec<f64>,
}

/// Fits the mixture to the unweighted rows of `data` by EM, starting from
/// `init`. The component count never changes; components whose
/// responsibility mass collapses are frozen at their previous parameters and
/// all variances are floored relative to `init`'s scale.
pub fn em_fit(init: &MixtureParams, data: &SampleBatch, settings: &EmSettings) -> Result<EmFit> {
    if data.dim() != init.dim() {
        return Err(Error::DimensionMismatch {
            expected: init.dim(),
            got: data.dim(),
        });
    }
    if settings.max_steps == 0 {
        return Err(Error::InvalidConfig("EM needs max_steps >= 1".into()));
    }
    if !(settings.rel_tol >= 0.0) {
        return Err(Error::InvalidConfig("EM rel_tol must be >= 0".into()));
    }

    let k = init.n_components();
    let floor = VARIANCE_FLOOR_REL
        * init
            .variance_entries()
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
    let mut frozen = vec![false; k];

    let mut theta = init.clone();
    let (mut resp, ll0) = e_step(&theta, data);
    let mut lls = vec![ll0];
    let mut ll_prev = ll0;
    for _ in 0..settings.max_steps {
        let theta_new = m_step(&theta, data, &resp, floor, &mut frozen)?;
        let (resp_new, ll_new) = e_step(&theta_new, data);
        theta = theta_new;
        resp = resp_new;
        lls.push(ll_new);
        if ll_new - ll_prev < settings.rel_tol * ll_prev.abs().max(1.0) {
            break;
        }
        ll_prev = ll_new;
    }
    Ok(EmFit {
        params: theta,
        mean_log_lik: lls,
    })
}

/// Responsibilities (row-major m x k) and mean log-likelihood of `theta`.
fn e_step(theta: &MixtureParams, data: &SampleBatch) -> (Vec<f64>, f64) {
    let (m, k) = (data.len(), theta.n_components());
    let mut resp = vec![0.0; m * k];
    let mut ll_sum = 0.0;
    let mut buf = vec![0.0; k];
    for i in 0..m {
        theta.log_weighted_components(data.row(i), &mut buf);
        let lse = log_sum_exp(&buf);
        ll_sum += lse;
        for c in 0..k {
            resp[i * k + c] = (buf[c] - lse).exp();
        }
    }
    (resp, ll_sum / m as f64)
}

fn m_step(
    theta: &MixtureParams,
    data: &SampleBatch,
    resp: &[f64],
    var_floor: f64,
    frozen: &mut [bool],
) -> Result<MixtureParams> {
    let (m, k, d) = (data.len(), theta.n_components(), theta.dim());
    let degenerate_below = k as f64 * DEGENERATE_MASS_REL * m as f64;

    let mut mass = vec![0.0; k];
    for i in 0..m {
        for c in 0..k {
            mass[c] += resp[i * k + c];
        }
    }
    for c in 0..k {
        if mass[c] < degenerate_below {
            frozen[c] = true;
        }
    }

    let mut weights = vec![0.0; k];
    let mut means = vec![0.0; k * d];
    let mut variances = vec![0.0; k * d];
    for c in 0..k {
        if frozen[c] {
            weights[c] = theta.weights()[c];
            means[c * d..(c + 1) * d].copy_from_slice(theta.mean(c));
            variances[c * d..(c + 1) * d].copy_from_slice(theta.variance(c));
        } else {
            weights[c] = mass[c] / m as f64;
        }
    }
    for i in 0..m {
        let x = data.row(i);
        for c in 0..k {
            if frozen[c] {
                continue;
            }
            let r = resp[i * k + c];
            for j in 0..d {
                means[c * d + j] += r * x[j];
            }
        }
    }
    for c in 0..k {
        if !frozen[c] {
            for j in 0..d {
                means[c * d + j] /= mass[c];
            }
        }
    }
    // Second pass for the variances, against the fresh means.
    for i in 0..m {
        let x = data.row(i);
        for c in 0..k {
            if frozen[c] {
                continue;
            }
            let r = resp[i * k + c];
            for j in 0..d {
                let diff = x[j] - means[c * d + j];
                variances[c * d + j] += r * diff * diff;
            }
        }
    }
    for c in 0..k {
        if !frozen[c] {
            for j in 0..d {
                variances[c * d + j] = (variances[c * d + j] / mass[c]).max(var_floor);
            }
        }
    }
    MixtureParams::new(weights, means, variances, d)
}
