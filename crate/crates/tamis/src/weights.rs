//! Importance weights in log space: effective sample size, temperature
//! calibration, anti-truncation and final-sample recycling.

use crate::math::log_sum_exp;
use crate::model::{MixtureParams, SampleBatch};
use crate::{Error, Result};

/// A batch of log importance weights. NaN and +inf are rejected; -inf marks
/// a zero weight and at least one entry must be finite. Sum aggregates are
/// cached at construction.
#[derive(Debug, Clone)]
pub struct LogWeightBatch {
    log_w: Vec<f64>,
    log_sum_w: f64,
    log_sum_w_sq: f64,
    n_finite: usize,
    max_finite: f64,
    min_finite: f64,
}

impl LogWeightBatch {
    pub fn new(log_w: Vec<f64>) -> Result<Self> {
        if log_w.is_empty() {
            return Err(Error::InvalidParams("empty weight batch".into()));
        }
        let mut n_finite = 0usize;
        let mut max_finite = f64::NEG_INFINITY;
        let mut min_finite = f64::INFINITY;
        for &lw in &log_w {
            if lw.is_nan() || lw == f64::INFINITY {
                return Err(Error::NonFinite("log weight (NaN or +inf)".into()));
            }
            if lw.is_finite() {
                n_finite += 1;
                max_finite = max_finite.max(lw);
                min_finite = min_finite.min(lw);
            }
        }
        if n_finite == 0 {
            return Err(Error::InvalidParams(
                "weight batch has no finite entry".into(),
            ));
        }
        let log_sum_w = log_sum_exp(&log_w);
        let doubled: Vec<f64> = log_w.iter().map(|lw| 2.0 * lw).collect();
        let log_sum_w_sq = log_sum_exp(&doubled);
        Ok(LogWeightBatch {
            log_w,
            log_sum_w,
            log_sum_w_sq,
            n_finite,
            max_finite,
            min_finite,
        })
    }

    pub fn len(&self) -> usize {
        self.log_w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_w.is_empty()
    }

    pub fn log_w(&self) -> &[f64] {
        &self.log_w
    }

    pub fn log_sum_w(&self) -> f64 {
        self.log_sum_w
    }

    pub fn log_sum_w_sq(&self) -> f64 {
        self.log_sum_w_sq
    }

    /// Self-normalized weights exp(lw_i - log sum w); they sum to 1 up to
    /// rounding and zero weights stay exactly 0.
    pub fn normalized(&self) -> Vec<f64> {
        self.log_w
            .iter()
            .map(|lw| (lw - self.log_sum_w).exp())
            .collect()
    }

    /// Effective sample size (sum w)^2 / sum w^2, always in [1, N].
    pub fn ess(&self) -> f64 {
        self.ess_at_beta(1.0)
    }

    /// ESS of the tempered weights w^beta for beta in [0, 1].
    ///
    /// Computed from entries centered at the finite maximum, which makes the
    /// result invariant under a common shift of the log weights whenever the
    /// shifted entries are exactly representable. Zero weights stay zero at
    /// every temperature, so ESS(0) equals the number of nonzero weights.
    pub fn ess_at_beta(&self, beta: f64) -> f64 {
        assert!(
            (0.0..=1.0).contains(&beta),
            "beta must lie in [0, 1], got {beta}"
        );
        let n = self.log_w.len() as f64;
        if beta == 0.0 || self.max_finite == self.min_finite {
            return self.n_finite as f64;
        }
        let mut s1 = 0.0f64;
        let mut s2 = 0.0f64;
        for &lw in &self.log_w {
            if lw.is_finite() {
                let e = (beta * (lw - self.max_finite)).exp();
                s1 += e;
                s2 += e * e;
            }
        }
        (s1 * s1 / s2).clamp(1.0, n)
    }

    /// Largest beta in (0, 1] whose tempered ESS still reaches `ess_min`:
    /// returns 1 outright when ESS(1) >= ess_min, otherwise bisects
    /// ESS(beta) = ess_min to within `tol` (at most 100 iterations) and
    /// returns the bracket midpoint.
    pub fn calibrate_beta(&self, ess_min: f64, tol: f64) -> Result<f64> {
        let n = self.log_w.len() as f64;
        if !(1.0..=n).contains(&ess_min) {
            return Err(Error::InvalidConfig(format!(
                "ess_min must lie in [1, N={n}], got {ess_min}"
            )));
        }
        if !(tol > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "bisection tol must be positive, got {tol}"
            )));
        }
        if self.ess_at_beta(1.0) >= ess_min {
            return Ok(1.0);
        }
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..100 {
            if hi - lo <= tol {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if self.ess_at_beta(mid) >= ess_min {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Tempers the weights by `beta`, computes the anti-truncation threshold
    /// at quantile `tau` and lifts every tempered weight below it. Zero
    /// weights are lifted too: resurrecting dead draws is the point of the
    /// threshold.
    pub fn anti_truncate(&self, beta: f64, tau: f64) -> Result<TemperingResult> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "anti-truncation needs beta in (0, 1], got {beta}"
            )));
        }
        let tempered: Vec<f64> = self.log_w.iter().map(|lw| beta * lw).collect();
        let s_log = anti_truncation_threshold(&tempered, tau)?;
        let log_w_hat = tempered.iter().map(|t| t.max(s_log)).collect();
        Ok(TemperingResult {
            beta,
            s_log,
            log_w_hat,
        })
    }
}

/// Output of tempering plus anti-truncation. When `beta` is 1 the caller had
/// ESS >= ess_min before truncation; when `tau` was 0, `s_log` is -inf and
/// `log_w_hat` equals the tempered weights.
#[derive(Debug, Clone)]
pub struct TemperingResult {
    pub beta: f64,
    pub s_log: f64,
    pub log_w_hat: Vec<f64>,
}

/// Elementwise log pi - log q. `log_q` must be finite everywhere (a proposal
/// cannot vanish on its own draws); `log_pi` may contain -inf.
pub fn log_weights(log_pi: &[f64], log_q: &[f64]) -> Result<LogWeightBatch> {
    if log_pi.len() != log_q.len() {
        return Err(Error::DimensionMismatch {
            expected: log_pi.len(),
            got: log_q.len(),
        });
    }
    if log_q.iter().any(|q| !q.is_finite()) {
        return Err(Error::NonFinite("proposal log-density at own draw".into()));
    }
    LogWeightBatch::new(
        log_pi
            .iter()
            .zip(log_q)
            .map(|(p, q)| p - q)
            .collect(),
    )
}

/// The tau-quantile threshold on tempered log weights: the ceil(tau*N)-th
/// smallest entry (a lower order statistic, no interpolation). tau = 0 means
/// no truncation and returns -inf. Entries at -inf participate and sort
/// first.
pub fn anti_truncation_threshold(tempered_log_w: &[f64], tau: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::InvalidConfig(format!(
            "tau must lie in [0, 1), got {tau}"
        )));
    }
    if tempered_log_w.is_empty() {
        return Err(Error::InvalidParams("empty weight batch".into()));
    }
    if tau == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    debug_assert!(tempered_log_w.iter().all(|v| !v.is_nan()));
    let n = tempered_log_w.len();
    let k = (tau * n as f64).ceil() as usize;
    let k = k.clamp(1, n);
    let mut sorted = tempered_log_w.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    Ok(sorted[k - 1])
}

/// Log-density of the deterministic multiple-importance mixture
/// (1/sum N_u) * sum_u N_u q_u at `x`. `ln_counts[u]` is ln N_u and
/// `ln_total` is ln sum N_u.
fn log_stage_mixture_refs(
    proposals: &[&MixtureParams],
    ln_counts: &[f64],
    ln_total: f64,
    x: &[f64],
) -> f64 {
    let per_stage: Vec<f64> = proposals
        .iter()
        .zip(ln_counts)
        .map(|(q, ln_n)| ln_n + q.log_density_unchecked(x))
        .collect();
    log_sum_exp(&per_stage) - ln_total
}

/// Final weights pi(x) / Q(x) for every draw of every stage, where Q is the
/// deterministic mixture of all stage proposals weighted by their draw
/// counts. Target log-densities come from the per-stage caches: the target
/// is never re-evaluated here.
pub fn recycle_weights(
    draws: &[SampleBatch],
    proposals: &[MixtureParams],
    log_pi: &[Vec<f64>],
) -> Result<LogWeightBatch> {
    let draws: Vec<&SampleBatch> = draws.iter().collect();
    let proposals: Vec<&MixtureParams> = proposals.iter().collect();
    let log_pi: Vec<&[f64]> = log_pi.iter().map(Vec::as_slice).collect();
    recycle_weights_refs(&draws, &proposals, &log_pi)
}

/// Borrowing form of [`recycle_weights`], so the engine can pool stages that
/// live inside its per-iteration records without copying them.
pub(crate) fn recycle_weights_refs(
    draws: &[&SampleBatch],
    proposals: &[&MixtureParams],
    log_pi: &[&[f64]],
) -> Result<LogWeightBatch> {
    if draws.is_empty() || draws.len() != proposals.len() || draws.len() != log_pi.len() {
        return Err(Error::InvalidParams(format!(
            "recycling needs equal nonzero stage counts, got {} draws / {} proposals / {} caches",
            draws.len(),
            proposals.len(),
            log_pi.len()
        )));
    }
    let dim = draws[0].dim();
    for (t, (batch, cache)) in draws.iter().zip(log_pi).enumerate() {
        if batch.dim() != dim || proposals[t].dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: batch.dim().min(proposals[t].dim()),
            });
        }
        if cache.len() != batch.len() {
            return Err(Error::InvalidParams(format!(
                "stage {} cache holds {} log-densities for {} draws",
                t + 1,
                cache.len(),
                batch.len()
            )));
        }
        if cache.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::NonFinite(format!(
                "cached target log-density at stage {}",
                t + 1
            )));
        }
    }

    let ln_counts: Vec<f64> = draws.iter().map(|b| (b.len() as f64).ln()).collect();
    let total: usize = draws.iter().map(|b| b.len()).sum();
    let ln_total = (total as f64).ln();

    let mut log_w = Vec::with_capacity(total);
    for (batch, cache) in draws.iter().zip(log_pi) {
        for i in 0..batch.len() {
            let log_q = log_stage_mixture_refs(proposals, &ln_counts, ln_total, batch.row(i));
            log_w.push(cache[i] - log_q);
        }
    }
    LogWeightBatch::new(log_w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn batch(values: &[f64]) -> LogWeightBatch {
        LogWeightBatch::new(values.to_vec()).unwrap()
    }

    #[test]
    fn ess_of_1_1_3_is_25_over_11() {
        let b = batch(&[0.0, 0.0, 3f64.ln()]);
        assert!((b.ess() - 25.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn ess_of_equal_weights_is_exactly_n() {
        let b = batch(&[-7.5; 64]);
        assert_eq!(b.ess(), 64.0);
        // Zero weights do not count.
        let b = batch(&[0.0, 0.0, f64::NEG_INFINITY]);
        assert_eq!(b.ess(), 2.0);
    }

    #[test]
    fn ess_of_a_single_surviving_weight_is_one() {
        let b = batch(&[0.0, -4000.0, -5000.0]);
        assert!((b.ess() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ess_at_beta_matches_direct_formula() {
        // Weights (1, e^10) at beta = 1/2: (1 + e^5)^2 / (1 + e^10).
        let b = batch(&[0.0, 10.0]);
        let expect = (1.0 + 5f64.exp()).powi(2) / (1.0 + 10f64.exp());
        assert!((b.ess_at_beta(0.5) - expect).abs() / expect < 1e-12);
    }

    #[test]
    fn ess_at_beta_endpoints() {
        let b = batch(&[0.3, -2.0, 1.7, 0.0]);
        assert_eq!(b.ess_at_beta(0.0), 4.0);
        assert!((b.ess_at_beta(1.0) - b.ess()).abs() < 1e-12);
        let with_zero = batch(&[0.3, f64::NEG_INFINITY, 1.7]);
        assert_eq!(with_zero.ess_at_beta(0.0), 2.0);
    }

    #[test]
    #[should_panic(expected = "beta must lie in")]
    fn ess_at_beta_rejects_out_of_range() {
        batch(&[0.0, 1.0]).ess_at_beta(1.5);
    }

    #[test]
    fn ess_is_shift_invariant_for_representable_shifts() {
        // Integer log weights plus a power-of-two shift stay exact, so the
        // centered computation produces bit-identical results.
        let a = batch(&[-3.0, 0.0, 2.0, 5.0, f64::NEG_INFINITY]);
        let shifted = batch(&[-3.0 + 1024.0, 1024.0, 2.0 + 1024.0, 5.0 + 1024.0, f64::NEG_INFINITY]);
        for beta in [0.13, 0.5, 0.99, 1.0] {
            assert_eq!(a.ess_at_beta(beta).to_bits(), shifted.ess_at_beta(beta).to_bits());
        }
        assert_eq!(
            a.calibrate_beta(2.5, 1e-6).unwrap().to_bits(),
            shifted.calibrate_beta(2.5, 1e-6).unwrap().to_bits()
        );
    }

    // Closed form for the calibration fixture: with weights (1, e^-100) and
    // u = e^{-100 beta}, ESS(beta) = (1+u)^2/(1+u^2) = 3/2 reduces to
    // u^2 - 4u + 1 = 0, whose root in (0,1) is u = 2 - sqrt(3). Hence
    // beta* = ln(2 + sqrt(3)) / 100.
    const TWO_POINT_BETA: f64 = 0.013169578969248166;

    #[test]
    fn two_point_closed_form_agrees_with_scalar_root_finder() {
        // Independent cross-check of the frozen constant against the raw
        // ESS equation, bisected without any crate code.
        let f = |beta: f64| {
            let u = (-100.0 * beta).exp();
            (1.0 + u).powi(2) / (1.0 + u * u) - 1.5
        };
        let (mut lo, mut hi) = (1e-6, 0.5);
        assert!(f(lo) > 0.0 && f(hi) < 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let root = 0.5 * (lo + hi);
        assert!((root - TWO_POINT_BETA).abs() < 1e-12, "root = {root}");
        let closed = (2.0 + 3f64.sqrt()).ln() / 100.0;
        assert!((closed - TWO_POINT_BETA).abs() < 1e-15);
    }

    #[test]
    fn calibrate_beta_two_point_instance() {
        let b = batch(&[0.0, -100.0]);
        let beta = b.calibrate_beta(1.5, 1e-6).unwrap();
        assert!(
            (beta - TWO_POINT_BETA).abs() < 1e-6,
            "beta = {beta}, expected {TWO_POINT_BETA}"
        );
        assert!((b.ess_at_beta(beta) - 1.5).abs() < 1e-3);
    }

    #[test]
    fn calibrate_beta_returns_one_when_untempered_ess_suffices() {
        let b = batch(&[0.0, 0.0, 3f64.ln()]); // ESS = 25/11 ~ 2.27
        assert_eq!(b.calibrate_beta(2.0, 1e-6).unwrap(), 1.0);
        // Boundary: ESS(1) equals ess_min exactly.
        let eq = batch(&[1.0; 4]);
        assert_eq!(eq.calibrate_beta(4.0, 1e-6).unwrap(), 1.0);
    }

    #[test]
    fn calibrate_beta_extreme_spread_hits_tolerance_floor() {
        let b = batch(&[0.0, -1e6]);
        let beta = b.calibrate_beta(1.5, 1e-6).unwrap();
        // True root is ln(2+sqrt(3))/1e6 ~ 1.32e-6; the bisection bracket
        // bottoms out at its tolerance.
        assert!(beta > 0.0 && beta < 3e-6, "beta = {beta}");
    }

    #[test]
    fn calibrate_beta_rejects_bad_settings() {
        let b = batch(&[0.0, -1.0]);
        assert!(b.calibrate_beta(0.5, 1e-6).is_err());
        assert!(b.calibrate_beta(2.5, 1e-6).is_err());
        assert!(b.calibrate_beta(1.5, 0.0).is_err());
    }

    #[test]
    fn threshold_matches_spec_example() {
        let lw: Vec<f64> = (-5..5).map(|v| v as f64).collect();
        assert_eq!(anti_truncation_threshold(&lw, 0.4).unwrap(), -2.0);
        assert_eq!(anti_truncation_threshold(&lw, 0.9).unwrap(), 3.0);
        assert_eq!(anti_truncation_threshold(&lw, 0.0).unwrap(), f64::NEG_INFINITY);
        assert!(anti_truncation_threshold(&lw, 1.0).is_err());
        assert!(anti_truncation_threshold(&lw, -0.1).is_err());
    }

    #[test]
    fn threshold_counts_zero_weights() {
        let lw = [f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0, 1.0];
        assert_eq!(anti_truncation_threshold(&lw, 0.5).unwrap(), f64::NEG_INFINITY);
        assert_eq!(anti_truncation_threshold(&lw, 0.75).unwrap(), 0.0);
    }

    #[test]
    fn anti_truncate_lifts_the_lower_tail() {
        let b = batch(&(-5..5).map(|v| v as f64).collect::<Vec<_>>());
        let tr = b.anti_truncate(1.0, 0.4).unwrap();
        assert_eq!(tr.s_log, -2.0);
        assert_eq!(&tr.log_w_hat[..4], &[-2.0, -2.0, -2.0, -2.0]);
        assert_eq!(&tr.log_w_hat[4..], &[-1.0, 0.0, 1.0, 2.0, 3.0, 4.0]);
        let at_s = tr.log_w_hat.iter().filter(|v| **v == tr.s_log).count();
        assert!(at_s >= 4); // at least ceil(tau N) entries sit at the threshold
    }

    #[test]
    fn anti_truncate_with_tau_zero_is_pure_tempering() {
        let b = batch(&[2.0, -1.0, f64::NEG_INFINITY]);
        let tr = b.anti_truncate(0.5, 0.0).unwrap();
        assert_eq!(tr.log_w_hat, vec![1.0, -0.5, f64::NEG_INFINITY]);
        assert_eq!(tr.s_log, f64::NEG_INFINITY);
    }

    #[test]
    fn anti_truncate_resurrects_zero_weights() {
        let b = batch(&[0.0, 1.0, f64::NEG_INFINITY, f64::NEG_INFINITY]);
        let tr = b.anti_truncate(1.0, 0.75).unwrap();
        // Threshold is the 3rd smallest tempered weight, i.e. 0.
        assert_eq!(tr.s_log, 0.0);
        assert_eq!(tr.log_w_hat, vec![0.0, 1.0, 0.0, 0.0]);
        assert!(b.anti_truncate(0.0, 0.5).is_err());
    }

    #[test]
    fn log_weights_validates_inputs() {
        assert!(log_weights(&[0.0, 1.0], &[0.0]).is_err());
        assert!(log_weights(&[0.0], &[f64::NEG_INFINITY]).is_err());
        assert!(log_weights(&[f64::INFINITY], &[0.0]).is_err());
        let b = log_weights(&[-1.0, f64::NEG_INFINITY], &[-2.0, -2.0]).unwrap();
        assert_eq!(b.log_w(), &[1.0, f64::NEG_INFINITY]);
    }

    #[test]
    fn batch_rejects_nan_inf_and_all_zero() {
        assert!(LogWeightBatch::new(vec![]).is_err());
        assert!(LogWeightBatch::new(vec![f64::NAN]).is_err());
        assert!(LogWeightBatch::new(vec![f64::INFINITY]).is_err());
        assert!(LogWeightBatch::new(vec![f64::NEG_INFINITY; 3]).is_err());
    }

    #[test]
    fn normalized_weights_sum_to_one() {
        let b = batch(&[-300.0, -301.5, f64::NEG_INFINITY, -299.0]);
        let w = b.normalized();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(w[2], 0.0);
    }

    fn gauss_sample(
        mean: f64,
        var: f64,
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> (SampleBatch, MixtureParams) {
        let q = MixtureParams::new(vec![1.0], vec![mean], vec![var], 1).unwrap();
        let b = q.sample(n, rng).unwrap();
        (b, q)
    }

    #[test]
    fn recycle_single_stage_equals_standard_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (b, q) = gauss_sample(0.5, 2.0, 256, &mut rng);
        let log_pi: Vec<f64> = (0..b.len())
            .map(|i| crate::math::gauss_ln_pdf(b.row(i)[0], 0.0, 1.0))
            .collect();
        let log_q = q.log_density_batch(&b).unwrap();
        let direct = log_weights(&log_pi, &log_q).unwrap();
        let rec = recycle_weights(&[b], &[q], &[log_pi]).unwrap();
        for (a, b) in direct.log_w().iter().zip(rec.log_w()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn recycle_two_stage_matches_hand_computed_mixture() {
        let q1 = MixtureParams::new(vec![1.0], vec![0.0], vec![1.0], 1).unwrap();
        let q2 = MixtureParams::new(vec![1.0], vec![1.0], vec![1.0], 1).unwrap();
        let b1 = SampleBatch::new(vec![0.2, -0.4], 1, 1).unwrap();
        let b2 = SampleBatch::new(vec![1.3], 1, 2).unwrap();
        let lpi = |x: f64| crate::math::gauss_ln_pdf(x, 0.0, 1.0);
        let caches = vec![vec![lpi(0.2), lpi(-0.4)], vec![lpi(1.3)]];
        let rec = recycle_weights(&[b1, b2], &[q1.clone(), q2.clone()], &caches).unwrap();
        // Q(x) = (2 q1(x) + 1 q2(x)) / 3 for every particle.
        for (i, &x) in [0.2, -0.4, 1.3].iter().enumerate() {
            let qmix = (2.0 * q1.log_density(&[x]).unwrap().exp()
                + q2.log_density(&[x]).unwrap().exp())
                / 3.0;
            let expect = lpi(x) - qmix.ln();
            assert!((rec.log_w()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn recycle_estimates_are_unbiased_on_a_two_stage_run() {
        // Target N(0,1); stage proposals N(0,1) and N(1,1). The
        // self-normalized mean must land within 3 standard errors of 0.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (b1, q1) = gauss_sample(0.0, 1.0, 50_000, &mut rng);
        let (b2, q2) = gauss_sample(1.0, 1.0, 50_000, &mut rng);
        let cache = |b: &SampleBatch| -> Vec<f64> {
            (0..b.len())
                .map(|i| crate::math::gauss_ln_pdf(b.row(i)[0], 0.0, 1.0))
                .collect()
        };
        let caches = vec![cache(&b1), cache(&b2)];
        let points: Vec<f64> = b1.points().iter().chain(b2.points()).copied().collect();
        let rec = recycle_weights(&[b1, b2], &[q1, q2], &caches).unwrap();
        let w = rec.normalized();
        let mean: f64 = w.iter().zip(&points).map(|(w, x)| w * x).sum();
        let se: f64 = w
            .iter()
            .zip(&points)
            .map(|(w, x)| (w * (x - mean)).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(mean.abs() <= 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn recycle_rejects_inconsistent_stages() {
        let q = MixtureParams::new(vec![1.0], vec![0.0], vec![1.0], 1).unwrap();
        let b = SampleBatch::new(vec![0.0, 1.0], 1, 1).unwrap();
        assert!(recycle_weights(&[], &[], &[]).is_err());
        assert!(recycle_weights(&[b.clone()], &[q.clone()], &[vec![0.0]]).is_err());
        assert!(recycle_weights(&[b.clone()], &[], &[vec![0.0, 0.0]]).is_err());
        assert!(recycle_weights(&[b], &[q], &[vec![0.0, f64::NAN]]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]

        #[test]
        fn ess_at_beta_is_nonincreasing(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(2usize..200);
            let sigma = 10f64.powf(rng.gen_range(-2.0..2.0));
            let lw: Vec<f64> = (0..n).map(|_| {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                sigma * z
            }).collect();
            let b = LogWeightBatch::new(lw).unwrap();
            let mut prev = f64::INFINITY;
            for j in 0..=50 {
                let beta = j as f64 / 50.0;
                let e = b.ess_at_beta(beta);
                prop_assert!(e <= prev + 1e-9 * n as f64);
                prev = e;
            }
        }

        #[test]
        fn ess_at_beta_is_continuous(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(2usize..100);
            let lw: Vec<f64> = (0..n).map(|_| rng.gen_range(-30.0..30.0)).collect();
            let b = LogWeightBatch::new(lw).unwrap();
            let beta = rng.gen_range(0.05..0.95);
            let h = 1e-8;
            let d = (b.ess_at_beta(beta + h) - b.ess_at_beta(beta)).abs();
            // |dESS/dbeta| is bounded by ~4 N max|log w|.
            prop_assert!(d <= 4.0 * n as f64 * 30.0 * h * 10.0 + 1e-9);
        }
    }
}
