use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::spectral::centered;
use super::time::{max_abs, rms, zero_crossing_rate};
use super::FeatureVector;

pub const AUTOCORR_JERK_FEATURES: [&str; 6] = [
    "ac_peak_lag",
    "ac_min_lag",
    "ac_zero_lag",
    "jerk_rms",
    "jerk_peak",
    "jerk_zcr",
];

/// Unbiased autocorrelation of a mean-removed series, normalized so lag 0 is
/// 1. Returns `None` for an all-zero series.
pub(crate) fn autocorrelation<S: Scalar>(y: &[S]) -> Option<Vec<S>> {
    let n = y.len();
    let energy = y.iter().fold(S::zero(), |a, &v| a + v * v) / S::of_usize(n);
    if !(energy > S::zero()) {
        return None;
    }
    Some(
        (0..n)
            .map(|k| {
                let s = (0..n - k).fold(S::zero(), |a, t| a + y[t] * y[t + k]);
                s / S::of_usize(n - k) / energy
            })
            .collect(),
    )
}

/// Autocorrelation lags (in samples) and jerk statistics.
///
/// Lags are the first local maximum, first local minimum (strictly beyond
/// both neighbors) and first non-positive value at lag >= 1; 0 when absent or
/// when the series is constant. Jerk is the first difference scaled by `fs`.
pub fn autocorr_jerk_features<S: Scalar>(series: &[S], fs: S) -> Result<FeatureVector<S>> {
    let n = series.len();
    if n < 4 {
        return Err(Error::invalid(format!(
            "autocorrelation features need at least 4 samples, got {n}"
        )));
    }
    let (mut peak, mut min, mut zero) = (0, 0, 0);
    if let Some(r) = autocorrelation(&centered(series)) {
        peak = (1..n - 1)
            .find(|&k| r[k] > r[k - 1] && r[k] > r[k + 1])
            .unwrap_or(0);
        min = (1..n - 1)
            .find(|&k| r[k] < r[k - 1] && r[k] < r[k + 1])
            .unwrap_or(0);
        zero = (1..n).find(|&k| r[k] <= S::zero()).unwrap_or(0);
    }

    let jerk: Vec<S> = series.windows(2).map(|w| (w[1] - w[0]) * fs).collect();

    let mut fv = FeatureVector::new();
    let values = [
        S::of_usize(peak),
        S::of_usize(min),
        S::of_usize(zero),
        rms(&jerk),
        max_abs(&jerk),
        zero_crossing_rate(&jerk),
    ];
    for (name, v) in AUTOCORR_JERK_FEATURES.iter().zip(values) {
        fv.insert(*name, v);
    }
    Ok(fv)
}
