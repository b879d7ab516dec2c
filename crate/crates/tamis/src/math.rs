//! Scalar numeric helpers shared across the crate.

/// ln(2*pi), the constant term of the Gaussian log-density.
pub const LN_2PI: f64 = 1.8378770664093453;

/// Natural log of the sum of exponentials of `values`, stable for any
/// magnitudes.
///
/// Empty input and all-(-inf) input both return -inf. NaN and +inf are
/// forbidden by the callers' contracts; a stray +inf is returned as is so the
/// violation stays visible.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Log-density of N(mean, var) at x. `var` must be strictly positive.
pub fn gauss_ln_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let diff = x - mean;
    -0.5 * (LN_2PI + var.ln() + diff * diff / var)
}

/// Normalized weights exp(lw_i - logsumexp(lw)). Entries at -inf map to 0.
/// The result sums to 1 up to rounding; at least one input must be finite.
pub fn normalized_from_log(log_w: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(log_w);
    debug_assert!(lse.is_finite(), "normalizing a batch with no finite entry");
    log_w.iter().map(|lw| (lw - lse).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_two_zeros_is_ln2() {
        assert!((log_sum_exp(&[0.0, 0.0]) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn log_sum_exp_empty_and_all_neg_inf() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(
            log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn log_sum_exp_extreme_magnitudes() {
        // exp(-1e4) underflows but the max-shift keeps the result exact.
        assert_eq!(log_sum_exp(&[-1e4, -1e4 + 1.0]).round(), -9999.0);
        let v = log_sum_exp(&[700.0, 700.0]);
        assert!((v - (700.0 + std::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_shift_exact_for_representable_shifts() {
        // Integer-valued inputs and an integer shift stay exactly
        // representable, so self-normalization cancels bit for bit.
        let xs = [-3.0, 0.0, 2.0, 5.0];
        let shifted: Vec<f64> = xs.iter().map(|x| x + 1024.0).collect();
        assert_eq!(log_sum_exp(&shifted), log_sum_exp(&xs) + 1024.0);
    }

    #[test]
    fn gauss_ln_pdf_standard_normal_at_zero() {
        // -0.5 * ln(2 pi) = -0.918938533204672...
        assert!((gauss_ln_pdf(0.0, 0.0, 1.0) + 0.9189385332046727).abs() < 1e-15);
    }

    #[test]
    fn gauss_ln_pdf_matches_direct_formula() {
        let v = gauss_ln_pdf(1.5, -2.0, 4.0);
        let direct = (-(1.5f64 + 2.0).powi(2) / 8.0).exp() / (8.0 * std::f64::consts::PI).sqrt();
        assert!((v - direct.ln()).abs() < 1e-12);
    }

    #[test]
    fn normalized_weights_sum_to_one() {
        let w = normalized_from_log(&[-1000.0, -1001.0, f64::NEG_INFINITY]);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(w[2], 0.0);
        assert!(w[0] > w[1]);
    }
}
