//! Straight-from-definition reference implementations. Nothing here calls the
//! library's numeric code.

use std::collections::BTreeMap;
use std::f64::consts::PI;

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn pvar(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64
}

fn quantile(x: &[f64], p: f64) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let h = (s.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    if lo + 1 >= s.len() {
        return s[lo];
    }
    s[lo] + (h - lo as f64) * (s[lo + 1] - s[lo])
}

fn median(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

fn zcr(x: &[f64]) -> f64 {
    let m = mean(x);
    let changes = (1..x.len())
        .filter(|&i| ((x[i - 1] - m) < 0.0 && (x[i] - m) > 0.0) || ((x[i - 1] - m) > 0.0 && (x[i] - m) < 0.0))
        .count();
    changes as f64 / (x.len() - 1) as f64
}

pub fn time(x: &[f64], fs: f64) -> BTreeMap<&'static str, f64> {
    let n = x.len() as f64;
    let m = mean(x);
    let var = pvar(x);
    let max = x.iter().cloned().fold(f64::MIN, f64::max);
    let min = x.iter().cloned().fold(f64::MAX, f64::min);
    let st: f64 = (0..x.len()).map(|t| t as f64).sum();
    let stt: f64 = (0..x.len()).map(|t| (t * t) as f64).sum();
    let stx: f64 = x.iter().enumerate().map(|(t, v)| t as f64 * v).sum();
    let sx: f64 = x.iter().sum();
    let slope = (n * stx - st * sx) / (n * stt - st * st);
    let d: Vec<f64> = (1..x.len()).map(|i| x[i] - x[i - 1]).collect();
    let sav: f64 = x.iter().map(|v| v.abs()).sum();
    let m3 = x.iter().map(|v| (v - m).powi(3)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    BTreeMap::from([
        ("mean", m),
        ("std", var.sqrt()),
        ("var", var),
        ("max", max),
        ("min", min),
        ("median", median(x)),
        ("rms", rms(x)),
        ("peak", max.abs().max(min.abs())),
        ("zcr", zcr(x)),
        ("slope", slope),
        ("diff_mean", mean(&d)),
        ("diff_rms", rms(&d)),
        ("diff_std", pvar(&d).sqrt()),
        ("range", max - min),
        ("sum", sx),
        ("sav", sav),
        ("mav", sav / n),
        ("iqr", quantile(x, 0.75) - quantile(x, 0.25)),
        ("skew", m3 / var.powf(1.5)),
        ("kurt", m4 / (var * var) - 3.0),
        ("sma", sav / n * n / fs),
    ])
}

/// One-sided power `|X_k|^2 / n` for `k = 1..=n/2` by direct summation.
pub fn dft_power(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    (1..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, v) in y.iter().enumerate() {
                let a = -2.0 * PI * (k * t) as f64 / n as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            (re * re + im * im) / n as f64
        })
        .collect()
}

/// Band of bin `k` of an `n`-point transform: low up to a third of Nyquist,
/// mid up to two thirds, high beyond.
fn band(k: usize, n: usize) -> usize {
    // k/n <= 1/6 and k/n <= 1/3 in integers
    if 6 * k <= n {
        0
    } else if 3 * k <= n {
        1
    } else {
        2
    }
}

fn entropy(p: &[f64]) -> f64 {
    let total: f64 = p.iter().sum();
    if total <= 0.0 {
        return 1.0;
    }
    -p.iter()
        .filter(|v| **v > 0.0)
        .map(|v| (v / total) * (v / total).ln())
        .sum::<f64>()
        / (p.len() as f64).ln()
}

pub fn fft(x: &[f64], fs: f64) -> BTreeMap<&'static str, f64> {
    let n = x.len();
    let m = mean(x);
    let y: Vec<f64> = x.iter().map(|v| v - m).collect();
    let p = dft_power(&y);
    let f = |i: usize| (i + 1) as f64 * fs / n as f64;
    let total: f64 = p.iter().sum();
    let mut b = [0.0; 3];
    for (i, v) in p.iter().enumerate() {
        b[band(i + 1, n)] += v;
    }
    let mut dom = 0;
    for i in 1..p.len() {
        if p[i] > p[dom] {
            dom = i;
        }
    }
    let is_peak = |i: usize| (i == 0 || p[i] > p[i - 1]) && (i + 1 == p.len() || p[i] > p[i + 1]);
    let mut second: Option<usize> = None;
    for i in (0..p.len()).filter(|&i| i != dom && is_peak(i)) {
        if second.is_none_or(|s| p[i] > p[s]) {
            second = Some(i);
        }
    }
    let centroid: f64 = p.iter().enumerate().map(|(i, v)| f(i) * v).sum::<f64>() / total;
    let moment = |k: i32| p.iter().enumerate().map(|(i, v)| v / total * (f(i) - centroid).powi(k)).sum::<f64>();
    let (m2, m3, m4) = (moment(2), moment(3), moment(4));
    let amp: f64 = p.iter().map(|v| v.sqrt()).sum();
    let waf = p.iter().enumerate().map(|(i, v)| f(i) * v.sqrt()).sum::<f64>() / amp;
    BTreeMap::from([
        ("bp_low", b[0]),
        ("bp_mid", b[1]),
        ("bp_high", b[2]),
        ("bpr_low", b[0] / total),
        ("bpr_mid", b[1] / total),
        ("bpr_high", b[2] / total),
        ("dom_freq", f(dom)),
        ("dom_power", p[dom]),
        ("peak2_freq", second.map_or(0.0, f)),
        ("peak2_power", second.map_or(0.0, |s| p[s])),
        ("spec_centroid", centroid),
        ("spec_entropy", entropy(&p)),
        ("spec_skew", m3 / m2.powf(1.5)),
        ("spec_kurt", m4 / (m2 * m2) - 3.0),
        ("waf", waf),
        ("spec_energy", total),
        ("max_power_idx", (dom + 1) as f64),
    ])
}

fn max_mean_std(v: &[f64]) -> (f64, f64, f64) {
    (v.iter().cloned().fold(f64::MIN, f64::max), mean(v), pvar(v).sqrt())
}

pub fn stft(x: &[f64], fs: f64) -> BTreeMap<&'static str, f64> {
    let n = x.len();
    let mut len = std::cmp::max(8, n / 4);
    if len % 2 == 1 {
        len -= 1;
    }
    let hop = len / 2;
    let m = mean(x);
    let w: Vec<f64> = (0..len).map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / len as f64).cos())).collect();
    let mut starts = vec![0];
    while starts.last().unwrap() + len < n {
        starts.push(starts.last().unwrap() + hop);
    }
    let (mut bands, mut ent, mut cen) = ([vec![], vec![], vec![]], vec![], vec![]);
    for s in starts {
        let frame: Vec<f64> = (0..len)
            .map(|i| if s + i < n { (x[s + i] - m) * w[i] } else { 0.0 })
            .collect();
        let p = dft_power(&frame);
        let mut b = [0.0; 3];
        for (i, v) in p.iter().enumerate() {
            b[band(i + 1, len)] += v;
        }
        for j in 0..3 {
            bands[j].push(b[j]);
        }
        let total: f64 = p.iter().sum();
        ent.push(entropy(&p));
        cen.push(if total > 0.0 {
            p.iter().enumerate().map(|(i, v)| (i + 1) as f64 * fs / len as f64 * v).sum::<f64>() / total
        } else {
            0.0
        });
    }
    let mut out = BTreeMap::new();
    let keys = [
        ["stft_low_max", "stft_low_mean", "stft_low_std"],
        ["stft_mid_max", "stft_mid_mean", "stft_mid_std"],
        ["stft_high_max", "stft_high_mean", "stft_high_std"],
    ];
    for (b, k) in bands.iter().zip(keys) {
        let (mx, mn, sd) = max_mean_std(b);
        out.insert(k[0], mx);
        out.insert(k[1], mn);
        out.insert(k[2], sd);
    }
    let (mx, mn, sd) = max_mean_std(&ent);
    out.insert("stft_entropy_max", mx);
    out.insert("stft_entropy_mean", mn);
    out.insert("stft_entropy_std", sd);
    let (mx, mn, sd) = max_mean_std(&cen);
    out.insert("stft_centroid_max", mx);
    out.insert("stft_centroid_mean", mn);
    out.insert("stft_centroid_std", sd);
    out
}

pub fn autocorr_jerk(x: &[f64], fs: f64) -> BTreeMap<&'static str, f64> {
    let n = x.len();
    let m = mean(x);
    let y: Vec<f64> = x.iter().map(|v| v - m).collect();
    let c0 = y.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let r: Vec<f64> = (0..n)
        .map(|k| (0..n - k).map(|t| y[t] * y[t + k]).sum::<f64>() / (n - k) as f64 / c0)
        .collect();
    let first = |pred: &dyn Fn(usize) -> bool, range: std::ops::Range<usize>| range.into_iter().find(|&k| pred(k)).unwrap_or(0) as f64;
    let jerk: Vec<f64> = (1..n).map(|i| (x[i] - x[i - 1]) * fs).collect();
    BTreeMap::from([
        ("ac_peak_lag", first(&|k| r[k] > r[k - 1] && r[k] > r[k + 1], 1..n - 1)),
        ("ac_min_lag", first(&|k| r[k] < r[k - 1] && r[k] < r[k + 1], 1..n - 1)),
        ("ac_zero_lag", first(&|k| r[k] <= 0.0, 1..n)),
        ("jerk_rms", rms(&jerk)),
        ("jerk_peak", jerk.iter().map(|v| v.abs()).fold(0.0, f64::max)),
        ("jerk_zcr", zcr(&jerk)),
    ])
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

pub fn magnitude(a: &[f64], b: &[f64], c: &[f64]) -> Vec<f64> {
    (0..a.len()).map(|t| (a[t] * a[t] + b[t] * b[t] + c[t] * c[t]).sqrt()).collect()
}

/// Dependent multivariate DTW on time-major rows by the full O(T^2) table:
/// squared Euclidean local cost, square root of the accumulated cost.
pub fn dtw(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let (n, m) = (x.len(), y.len());
    let mut d = vec![vec![f64::INFINITY; m + 1]; n + 1];
    d[0][0] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let cost: f64 = x[i - 1].iter().zip(&y[j - 1]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i][j] = cost + d[i - 1][j].min(d[i][j - 1]).min(d[i - 1][j - 1]);
        }
    }
    d[n][m].sqrt()
}

/// Per-document reciprocal-rank sum by scanning every list for the id.
pub fn rrf(lists: &[Vec<String>], k_rrf: i64) -> Vec<(String, num_rational::Ratio<i64>)> {
    use num_rational::Ratio;
    let mut ids: Vec<&String> = lists.iter().flatten().collect();
    ids.sort();
    ids.dedup();
    let mut out: Vec<(String, Ratio<i64>)> = ids
        .into_iter()
        .map(|id| {
            let s = lists
                .iter()
                .filter_map(|l| l.iter().position(|x| x == id))
                .map(|r| Ratio::new(1, k_rrf + r as i64))
                .fold(Ratio::from_integer(0), |a, b| a + b);
            (id.clone(), s)
        })
        .collect();
    out.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

/// Macro F1 from an explicit confusion matrix over `labels`; every truth
/// and prediction must be a label.
pub fn macro_f1(truth: &[&str], pred: &[&str], labels: &[&str]) -> f64 {
    let idx = |s: &str| labels.iter().position(|l| *l == s).expect("label listed");
    let k = labels.len();
    let mut cm = vec![vec![0usize; k]; k];
    for (t, p) in truth.iter().zip(pred) {
        cm[idx(t)][idx(p)] += 1;
    }
    let mut total = 0.0;
    for c in 0..k {
        let tp = cm[c][c] as f64;
        let predicted: usize = (0..k).map(|r| cm[r][c]).sum();
        let actual: usize = cm[c].iter().sum();
        let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
        let recall = if actual > 0 { tp / actual as f64 } else { 0.0 };
        total += if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
    }
    total / k as f64
}
