//! Depth prediction error metrics.

use crate::error::{Error, Result};
use crate::math::{abs, ln, log10, mean, sqrt};

/// Predictions are clamped to at least this value before logarithms.
pub const DEPTH_EPS: f64 = 1e-3;

/// The depth error family; all zero when prediction equals ground truth.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DepthScores {
    /// `sqrt(mean((ln pred - ln gt)^2))`
    pub rmse_log: f64,
    /// Scale-invariant log error, reported x100:
    /// `100 * sqrt(mean(d^2) - mean(d)^2)` with `d = ln pred - ln gt`.
    pub silog: f64,
    /// `mean(|log10 pred - log10 gt|)`
    pub log10: f64,
    /// `mean(|pred - gt| / gt)`
    pub abs_rel: f64,
    /// Number of prediction values raised to [`DEPTH_EPS`] (clamp warning).
    pub clamped_pixels: usize,
}

/// Compute the depth error family. Ground truth must be strictly positive;
/// predictions below [`DEPTH_EPS`] are clamped and counted.
pub fn depth_scores(pred: &[f64], gt: &[f64]) -> Result<DepthScores> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch { what: "depth_scores", left: pred.len(), right: gt.len() });
    }
    if pred.is_empty() {
        return Err(Error::Empty("depth_scores"));
    }
    if gt.iter().any(|&g| !g.is_finite() || g <= 0.0) {
        return Err(Error::NonPositiveDepth);
    }
    if pred.iter().any(|&p| !p.is_finite()) {
        return Err(Error::NonFinite("depth prediction"));
    }
    let mut clamped_pixels = 0usize;
    let mut log_diffs = alloc::vec::Vec::with_capacity(pred.len());
    let mut log10_sum = 0.0;
    let mut abs_rel_sum = 0.0;
    for (&p0, &g) in pred.iter().zip(gt) {
        let p = if p0 < DEPTH_EPS {
            clamped_pixels += 1;
            DEPTH_EPS
        } else {
            p0
        };
        log_diffs.push(ln(p) - ln(g));
        log10_sum += abs(log10(p) - log10(g));
        abs_rel_sum += abs(p - g) / g;
    }
    let n = pred.len() as f64;
    let d_mean = mean(&log_diffs);
    let d_sq_mean = log_diffs.iter().map(|d| d * d).sum::<f64>() / n;
    // Two-pass variance: equal to mean(d^2) - mean(d)^2 in exact arithmetic
    // but without the cancellation that form suffers when mean(d) dominates.
    let d_var = log_diffs.iter().map(|d| (d - d_mean) * (d - d_mean)).sum::<f64>() / n;
    Ok(DepthScores {
        rmse_log: sqrt(d_sq_mean),
        silog: 100.0 * sqrt(d_var),
        log10: log10_sum / n,
        abs_rel: abs_rel_sum / n,
        clamped_pixels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const E: f64 = core::f64::consts::E;

    #[test]
    fn zero_error_when_equal() {
        let gt = [1.0, 2.5, 7.0];
        let s = depth_scores(&gt, &gt).unwrap();
        assert_abs_diff_eq!(s.rmse_log, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.silog, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.log10, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.abs_rel, 0.0, epsilon = 1e-15);
        assert_eq!(s.clamped_pixels, 0);
    }

    #[test]
    fn constant_log_offset() {
        // pred = e * gt: rmse_log = 1, log10 = log10(e), abs_rel = e - 1,
        // and silog = 0 because the log offset is constant.
        let gt = [0.5, 1.0, 3.0, 9.0];
        let pred: Vec<f64> = gt.iter().map(|g| E * g).collect();
        let s = depth_scores(&pred, &gt).unwrap();
        assert_abs_diff_eq!(s.rmse_log, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.log10, log10(E), epsilon = 1e-12);
        assert_abs_diff_eq!(s.abs_rel, E - 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.silog, 0.0, epsilon = 1e-6);
    }

    #[test]
    fn two_pixel_hand_case() {
        // pred = [1, e^2], gt = [1, 1]: d = [0, 2].
        // rmse_log = sqrt(2); silog = 100 * sqrt(2 - 1) = 100;
        // abs_rel = (0 + (e^2 - 1)) / 2.
        let s = depth_scores(&[1.0, E * E], &[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(s.rmse_log, sqrt(2.0), epsilon = 1e-12);
        assert_abs_diff_eq!(s.silog, 100.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.abs_rel, (E * E - 1.0) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn silog_invariant_to_positive_rescaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let gt: Vec<f64> = (0..20).map(|_| rng.gen_range(0.1..10.0)).collect();
            let c: f64 = rng.gen_range(0.05..20.0);
            let pred: Vec<f64> = gt.iter().map(|g| c * g).collect();
            let s = depth_scores(&pred, &gt).unwrap();
            assert!(s.silog.abs() < 1e-6, "silog {} for c={c}", s.silog);
        }
    }

    #[test]
    fn clamping_and_errors() {
        let s = depth_scores(&[0.0, 1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(s.clamped_pixels, 1);
        assert!(matches!(depth_scores(&[1.0], &[0.0]), Err(Error::NonPositiveDepth)));
        assert!(matches!(depth_scores(&[1.0], &[-1.0]), Err(Error::NonPositiveDepth)));
        assert!(matches!(depth_scores(&[], &[]), Err(Error::Empty(_))));
        assert!(matches!(depth_scores(&[1.0], &[1.0, 2.0]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let gt: Vec<f64> = (0..30).map(|_| rng.gen_range(0.5..5.0)).collect();
        let pred: Vec<f64> = (0..30).map(|_| rng.gen_range(0.5..5.0)).collect();
        let s1 = depth_scores(&pred, &gt).unwrap();
        let mut idx: Vec<usize> = (0..30).collect();
        idx.reverse();
        let pred2: Vec<f64> = idx.iter().map(|&i| pred[i]).collect();
        let gt2: Vec<f64> = idx.iter().map(|&i| gt[i]).collect();
        let s2 = depth_scores(&pred2, &gt2).unwrap();
        assert_abs_diff_eq!(s1.rmse_log, s2.rmse_log, epsilon = 1e-12);
        assert_abs_diff_eq!(s1.silog, s2.silog, epsilon = 1e-9);
        assert_abs_diff_eq!(s1.abs_rel, s2.abs_rel, epsilon = 1e-12);
    }
}
