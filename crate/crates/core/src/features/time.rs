use crate::error::{Error, Result};
use crate::scalar::{negligible_variance, Scalar};

use super::FeatureVector;

/// Time-domain feature suffixes, in emission order.
pub const TIME_FEATURES: [&str; 21] = [
    "mean", "std", "var", "max", "min", "median", "rms", "peak", "zcr", "slope", "diff_mean",
    "diff_rms", "diff_std", "range", "sum", "sav", "mav", "iqr", "skew", "kurt", "sma",
];

pub(crate) fn mean<S: Scalar>(xs: &[S]) -> S {
    xs.iter().fold(S::zero(), |a, &b| a + b) / S::of_usize(xs.len())
}

/// Population variance around `m`.
pub(crate) fn variance_about<S: Scalar>(xs: &[S], m: S) -> S {
    xs.iter().fold(S::zero(), |a, &x| a + (x - m) * (x - m)) / S::of_usize(xs.len())
}

pub(crate) fn rms<S: Scalar>(xs: &[S]) -> S {
    (xs.iter().fold(S::zero(), |a, &x| a + x * x) / S::of_usize(xs.len())).sqrt()
}

pub(crate) fn max_abs<S: Scalar>(xs: &[S]) -> S {
    xs.iter().fold(S::zero(), |a, &x| a.max(x.abs()))
}

/// Population standard deviation plus a flag for numerically constant input.
pub(crate) fn spread<S: Scalar>(xs: &[S]) -> (S, S, bool) {
    let m = mean(xs);
    let var = variance_about(xs, m);
    let degenerate = negligible_variance(var, max_abs(xs));
    if degenerate {
        (m, S::zero(), true)
    } else {
        (m, var, false)
    }
}

/// Sign changes between adjacent mean-removed samples, divided by `len - 1`.
pub(crate) fn zero_crossing_rate<S: Scalar>(xs: &[S]) -> S {
    if xs.len() < 2 {
        return S::zero();
    }
    let (m, _, degenerate) = spread(xs);
    if degenerate {
        return S::zero();
    }
    let crossings = xs
        .windows(2)
        .filter(|w| (w[0] - m) * (w[1] - m) < S::zero())
        .count();
    S::of_usize(crossings) / S::of_usize(xs.len() - 1)
}

/// Linear-interpolated quantile of sorted data (position `p * (n - 1)`).
pub(crate) fn quantile_sorted<S: Scalar>(sorted: &[S], p: f64) -> S {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = S::of(pos - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Time-domain statistics of one channel.
///
/// `fs` only enters the signal magnitude area, which integrates `|x|` over
/// the window duration: `sum(|x|) / fs`.
pub fn time_features<S: Scalar>(series: &[S], fs: S) -> Result<FeatureVector<S>> {
    let n = series.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "time features need at least 2 samples, got {n}"
        )));
    }
    if !(fs > S::zero()) {
        return Err(Error::invalid("sampling rate must be positive"));
    }
    let nf = S::of_usize(n);
    let (m, var, degenerate) = spread(series);
    let std = var.sqrt();

    let mut sorted = series.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let min = sorted[0];
    let max = sorted[n - 1];
    let median = quantile_sorted(&sorted, 0.5);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);

    let sum = series.iter().fold(S::zero(), |a, &x| a + x);
    let sav = series.iter().fold(S::zero(), |a, &x| a + x.abs());

    // Least-squares slope against the sample index.
    let t_mean = S::of_usize(n - 1) / S::of(2.0);
    let (mut sxy, mut sxx) = (S::zero(), S::zero());
    for (i, &x) in series.iter().enumerate() {
        let dt = S::of_usize(i) - t_mean;
        sxy += dt * (x - m);
        sxx += dt * dt;
    }

    let diffs: Vec<S> = series.windows(2).map(|w| w[1] - w[0]).collect();
    let (diff_mean, diff_var, _) = spread(&diffs);

    let (skew, kurt) = if degenerate {
        (S::zero(), S::zero())
    } else {
        let (mut m3, mut m4) = (S::zero(), S::zero());
        for &x in series {
            let d = x - m;
            m3 += d * d * d;
            m4 += d * d * d * d;
        }
        m3 /= nf;
        m4 /= nf;
        (m3 / (var * std), m4 / (var * var) - S::of(3.0))
    };

    let mut fv = FeatureVector::new();
    let values = [
        m,
        std,
        var,
        max,
        min,
        median,
        rms(series),
        max_abs(series),
        zero_crossing_rate(series),
        sxy / sxx,
        diff_mean,
        rms(&diffs),
        diff_var.sqrt(),
        max - min,
        sum,
        sav,
        sav / nf,
        iqr,
        skew,
        kurt,
        sav / fs,
    ];
    for (name, v) in TIME_FEATURES.iter().zip(values) {
        fv.insert(*name, v);
    }
    Ok(fv)
}
