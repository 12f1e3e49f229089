//! Split-conformal calibration of quantile intervals (CQR).

use serde::{Deserialize, Serialize};

use crate::error::{check_level, Error, Result};
use crate::losses::IntervalBatch;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    /// Additive widening applied to both endpoints.
    pub q: f64,
    pub n_cal: usize,
    pub alpha: f64,
}

/// `E_i = max(lo_i - y_i, y_i - hi_i)`; negative inside the interval.
pub fn conformity_scores(intervals: &IntervalBatch) -> Vec<f64> {
    (0..intervals.len())
        .map(|i| (intervals.lo[i] - intervals.y[i]).max(intervals.y[i] - intervals.hi[i]))
        .collect()
}

/// Rank `ceil((1 - alpha)(n + 1))` of the order statistics, 1-based.
pub fn conformal_rank(n_cal: usize, alpha: f64) -> usize {
    // guard against 0.9 * 10 landing a hair above 9
    let k = ((1.0 - alpha) * (n_cal as f64 + 1.0) - 1e-9).ceil();
    (k.max(1.0)) as usize
}

/// The conformal correction from calibration intervals.
pub fn calibrate(intervals: &IntervalBatch, alpha: f64) -> Result<CalibrationResult> {
    check_level("alpha", alpha)?;
    let n_cal = intervals.len();
    let k = conformal_rank(n_cal, alpha);
    if k > n_cal {
        return Err(Error::CalibrationTooSmall { n_cal, alpha });
    }
    let mut scores = conformity_scores(intervals);
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidParameter("NaN conformity score".into()));
    }
    let (_, q, _) = scores.select_nth_unstable_by(k - 1, f64::total_cmp);
    Ok(CalibrationResult {
        q: *q,
        n_cal,
        alpha,
    })
}

/// `[lo - Q, hi + Q]` for every interval.
pub fn conformalize(intervals: &IntervalBatch, result: &CalibrationResult) -> IntervalBatch {
    IntervalBatch {
        lo: intervals.lo.iter().map(|l| l - result.q).collect(),
        hi: intervals.hi.iter().map(|h| h + result.q).collect(),
        y: intervals.y.clone(),
    }
}
