//! FFT and STFT descriptors.
//!
//! Conventions shared by both:
//! - the series is mean-removed first; a numerically constant series is
//!   treated as all zeros;
//! - power is the one-sided periodogram `|X_k|^2 / n` over the AC bins
//!   `k = 1..=n/2` (DC is excluded);
//! - `(0, fs/2]` is split into equal thirds: bin `k` is low when
//!   `6k <= n`, mid when `3k <= n`, otherwise high. The test is exact in
//!   integers, so band membership never depends on rounding of `fs`.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::time::spread;
use super::FeatureVector;

pub const FFT_FEATURES: [&str; 17] = [
    "bp_low",
    "bp_mid",
    "bp_high",
    "bpr_low",
    "bpr_mid",
    "bpr_high",
    "dom_freq",
    "dom_power",
    "peak2_freq",
    "peak2_power",
    "spec_centroid",
    "spec_entropy",
    "spec_skew",
    "spec_kurt",
    "waf",
    "spec_energy",
    "max_power_idx",
];

pub const STFT_FEATURES: [&str; 15] = [
    "stft_low_max",
    "stft_low_mean",
    "stft_low_std",
    "stft_mid_max",
    "stft_mid_mean",
    "stft_mid_std",
    "stft_high_max",
    "stft_high_mean",
    "stft_high_std",
    "stft_entropy_mean",
    "stft_entropy_max",
    "stft_entropy_std",
    "stft_centroid_mean",
    "stft_centroid_max",
    "stft_centroid_std",
];

pub const MIN_SPECTRAL_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Band {
    Low,
    Mid,
    High,
}

/// Band of AC bin `k` in an `n`-point transform.
pub(crate) fn band_of(k: usize, n: usize) -> Band {
    if 6 * k <= n {
        Band::Low
    } else if 3 * k <= n {
        Band::Mid
    } else {
        Band::High
    }
}

pub(crate) fn centered<S: Scalar>(series: &[S]) -> Vec<S> {
    let (m, _, degenerate) = spread(series);
    if degenerate {
        vec![S::zero(); series.len()]
    } else {
        series.iter().map(|&x| x - m).collect()
    }
}

/// `|X_k|^2 / n` for `k = 1..=n/2`; index 0 of the result is bin 1.
pub(crate) fn ac_power<S: Scalar>(planner: &mut FftPlanner<S>, frame: &[S]) -> Vec<S> {
    let n = frame.len();
    let mut buf: Vec<Complex<S>> = frame.iter().map(|&x| Complex::new(x, S::zero())).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let nf = S::of_usize(n);
    buf[1..=n / 2].iter().map(|c| c.norm_sqr() / nf).collect()
}

/// Normalized Shannon entropy of a power distribution; 1 for an all-zero
/// spectrum (uniform convention).
pub(crate) fn normalized_entropy<S: Scalar>(power: &[S], total: S) -> S {
    if !(total > S::zero()) || power.len() < 2 {
        return S::one();
    }
    let mut h = S::zero();
    for &p in power {
        let q = p / total;
        if q > S::zero() {
            h -= q * q.ln();
        }
    }
    h / S::of_usize(power.len()).ln()
}

fn check(n: usize, fs: f64) -> Result<()> {
    if n < MIN_SPECTRAL_LEN {
        return Err(Error::invalid(format!(
            "spectral features need at least {MIN_SPECTRAL_LEN} samples, got {n}"
        )));
    }
    if !(fs > 0.0) {
        return Err(Error::invalid("sampling rate must be positive"));
    }
    Ok(())
}

/// Local maxima of a spectrum: strictly above both neighbors (edge bins
/// compare against their one neighbor).
fn local_maxima<S: Scalar>(p: &[S]) -> impl Iterator<Item = usize> + '_ {
    (0..p.len()).filter(move |&i| {
        let left = i == 0 || p[i] > p[i - 1];
        let right = i + 1 == p.len() || p[i] > p[i + 1];
        left && right
    })
}

/// Whole-window spectral descriptors.
///
/// Frequencies are in Hz. The spectral spread is treated as zero (so
/// spectral skewness and kurtosis are 0) when it falls below `1e-6` of the
/// bin width. `max_power_idx` is the FFT bin number of the dominant peak.
pub fn fft_features<S: Scalar>(series: &[S], fs: S) -> Result<FeatureVector<S>> {
    let n = series.len();
    check(n, fs.to_f64_lossy())?;
    let mut planner = FftPlanner::new();
    let power = ac_power(&mut planner, &centered(series));
    let bin_hz = fs / S::of_usize(n);
    let freq = |i: usize| S::of_usize(i + 1) * bin_hz;

    let total = power.iter().fold(S::zero(), |a, &b| a + b);
    let mut bands = [S::zero(); 3];
    for (i, &p) in power.iter().enumerate() {
        bands[band_of(i + 1, n) as usize] += p;
    }
    let ratio = |b: S| if total > S::zero() { b / total } else { S::zero() };

    let zero = S::zero();
    let (mut dom_freq, mut dom_power, mut dom_idx) = (zero, zero, zero);
    let (mut p2_freq, mut p2_power) = (zero, zero);
    let (mut centroid, mut skew, mut kurt, mut waf) = (zero, zero, zero, zero);

    if total > S::zero() {
        let mut best = 0;
        for (i, &p) in power.iter().enumerate() {
            if p > power[best] {
                best = i;
            }
        }
        dom_freq = freq(best);
        dom_power = power[best];
        dom_idx = S::of_usize(best + 1);

        if let Some(second) = local_maxima(&power)
            .filter(|&i| i != best)
            .fold(None, |acc: Option<usize>, i| match acc {
                Some(j) if power[j] >= power[i] => Some(j),
                _ => Some(i),
            })
        {
            p2_freq = freq(second);
            p2_power = power[second];
        }

        for (i, &p) in power.iter().enumerate() {
            centroid += freq(i) * p;
        }
        centroid /= total;
        let (mut m2, mut m3, mut m4) = (zero, zero, zero);
        for (i, &p) in power.iter().enumerate() {
            let d = freq(i) - centroid;
            let w = p / total;
            m2 += w * d * d;
            m3 += w * d * d * d;
            m4 += w * d * d * d * d;
        }
        let sigma = m2.sqrt();
        if sigma > bin_hz * S::of(1e-6) {
            skew = m3 / (sigma * sigma * sigma);
            kurt = m4 / (m2 * m2) - S::of(3.0);
        }

        let (mut num, mut den) = (zero, zero);
        for (i, &p) in power.iter().enumerate() {
            let a = p.sqrt();
            num += freq(i) * a;
            den += a;
        }
        waf = num / den;
    }

    let values = [
        bands[0],
        bands[1],
        bands[2],
        ratio(bands[0]),
        ratio(bands[1]),
        ratio(bands[2]),
        dom_freq,
        dom_power,
        p2_freq,
        p2_power,
        centroid,
        normalized_entropy(&power, total),
        skew,
        kurt,
        waf,
        total,
        dom_idx,
    ];
    let mut fv = FeatureVector::new();
    for (name, v) in FFT_FEATURES.iter().zip(values) {
        fv.insert(*name, v);
    }
    Ok(fv)
}

/// Frame layout of the short-time transform for a window of `n` samples:
/// `(frame_len, hop, frame_count)`.
///
/// Frame length is `max(8, n/4)` rounded down to even, hop is half a frame,
/// and one zero-padded frame is appended when full frames do not reach the
/// end of the window.
pub fn stft_layout(n: usize) -> (usize, usize, usize) {
    let len = (n / 4).max(8) & !1;
    let hop = len / 2;
    let count = if n <= len {
        1
    } else {
        1 + (n - len).div_ceil(hop)
    };
    (len, hop, count)
}

/// Periodic Hann window.
pub(crate) fn hann<S: Scalar>(len: usize) -> Vec<S> {
    let l = S::of_usize(len);
    (0..len)
        .map(|i| S::of(0.5) - S::of(0.5) * (S::TAU() * S::of_usize(i) / l).cos())
        .collect()
}

fn max_mean_std<S: Scalar>(xs: &[S]) -> [S; 3] {
    let n = S::of_usize(xs.len());
    let mean = xs.iter().fold(S::zero(), |a, &b| a + b) / n;
    let var = xs.iter().fold(S::zero(), |a, &x| a + (x - mean) * (x - mean)) / n;
    let max = xs.iter().fold(S::neg_infinity(), |a, &b| a.max(b));
    [max, mean, var.sqrt()]
}

/// Short-time spectral descriptors: per-band frame power, per-frame
/// normalized entropy and per-frame centroid (Hz), each summarized by
/// max/mean/std across frames. A silent frame has entropy 1 and centroid 0.
pub fn stft_features<S: Scalar>(series: &[S], fs: S) -> Result<FeatureVector<S>> {
    let n = series.len();
    check(n, fs.to_f64_lossy())?;
    let y = centered(series);
    let (len, hop, count) = stft_layout(n);
    let window: Vec<S> = hann(len);
    let bin_hz = fs / S::of_usize(len);
    let mut planner = FftPlanner::new();

    let mut band_series = [vec![], vec![], vec![]];
    let mut entropies = Vec::with_capacity(count);
    let mut centroids = Vec::with_capacity(count);
    let mut frame = vec![S::zero(); len];
    for j in 0..count {
        let start = j * hop;
        for (i, slot) in frame.iter_mut().enumerate() {
            *slot = y.get(start + i).map_or(S::zero(), |&v| v * window[i]);
        }
        let power = ac_power(&mut planner, &frame);
        let total = power.iter().fold(S::zero(), |a, &b| a + b);
        let mut bands = [S::zero(); 3];
        let mut weighted = S::zero();
        for (i, &p) in power.iter().enumerate() {
            bands[band_of(i + 1, len) as usize] += p;
            weighted += S::of_usize(i + 1) * bin_hz * p;
        }
        for (series, b) in band_series.iter_mut().zip(bands) {
            series.push(b);
        }
        entropies.push(normalized_entropy(&power, total));
        centroids.push(if total > S::zero() {
            weighted / total
        } else {
            S::zero()
        });
    }

    let mut values = Vec::with_capacity(15);
    for s in &band_series {
        values.extend(max_mean_std(s));
    }
    let [emax, emean, estd] = max_mean_std(&entropies);
    values.extend([emean, emax, estd]);
    let [cmax, cmean, cstd] = max_mean_std(&centroids);
    values.extend([cmean, cmax, cstd]);

    let mut fv = FeatureVector::new();
    for (name, v) in STFT_FEATURES.iter().zip(values) {
        fv.insert(*name, v);
    }
    Ok(fv)
}
