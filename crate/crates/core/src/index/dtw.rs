//! Dependent multivariate dynamic time warping.

use crate::data::Window;
use crate::error::Result;
use crate::features::spread;
use crate::scalar::Scalar;

/// A multichannel series stored time-major: sample `t` of channel `c` is at
/// `t * channels + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Series<S> {
    pub channels: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Series<S> {
    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.channels).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Z-scores each column independently; a constant column becomes zeros.
    pub fn from_columns(columns: &[&[f64]]) -> Self {
        let channels = columns.len();
        let t = columns.first().map_or(0, |c| c.len());
        let mut data = vec![S::zero(); t * channels];
        for (c, col) in columns.iter().enumerate() {
            let xs: Vec<S> = col.iter().map(|&v| S::of(v)).collect();
            let (m, var, degenerate) = spread(&xs);
            if degenerate {
                continue;
            }
            let sd = var.sqrt();
            for (i, &x) in xs.iter().enumerate() {
                data[i * channels + c] = (x - m) / sd;
            }
        }
        Self { channels, data }
    }

    /// The z-scored raw channels of one placement.
    pub fn from_window(window: &Window, placement: &str, channels: &[String]) -> Result<Self> {
        let cols = channels
            .iter()
            .map(|c| window.channel(placement, c))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_columns(&cols))
    }

    fn row(&self, t: usize) -> &[S] {
        &self.data[t * self.channels..(t + 1) * self.channels]
    }
}

/// DTW distance: square root of the minimal accumulated squared-Euclidean
/// cost over warping paths sharing one alignment across all channels.
/// `band` limits `|i - j|` (widened to the length difference so a path
/// always exists); `None` allows every alignment.
pub fn dtw_distance<S: Scalar>(x: &Series<S>, y: &Series<S>, band: Option<usize>) -> S {
    assert_eq!(x.channels, y.channels, "dtw: channel count mismatch");
    let (n, m) = (x.len(), y.len());
    if n == 0 || m == 0 {
        return if n == m { S::zero() } else { S::infinity() };
    }
    let w = band.map_or(usize::MAX, |b| b.max(n.abs_diff(m)));
    let inf = S::infinity();
    let mut prev = vec![inf; m + 1];
    let mut cur = vec![inf; m + 1];
    prev[0] = S::zero();
    for i in 1..=n {
        cur.fill(inf);
        let xi = x.row(i - 1);
        let lo = if w == usize::MAX { 1 } else { i.saturating_sub(w).max(1) };
        let hi = if w == usize::MAX { m } else { (i + w).min(m) };
        for j in lo..=hi {
            let cost = xi
                .iter()
                .zip(y.row(j - 1))
                .fold(S::zero(), |a, (&p, &q)| a + (p - q) * (p - q));
            let best = prev[j - 1].min(prev[j]).min(cur[j - 1]);
            cur[j] = cost + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m].sqrt()
}

/// Similarity of two windows at one placement: the negated DTW distance of
/// their z-scored channels.
pub fn dtw_score<S: Scalar>(
    query: &Window,
    candidate: &Window,
    placement: &str,
    channels: &[String],
    band: Option<usize>,
) -> Result<S> {
    let q = Series::<S>::from_window(query, placement, channels)?;
    let c = Series::<S>::from_window(candidate, placement, channels)?;
    Ok(-dtw_distance(&q, &c, band))
}
