use crate::scalar::Scalar;

use super::time::spread;

/// Pearson correlation; 0 when either series is numerically constant.
pub fn pearson<S: Scalar>(x: &[S], y: &[S]) -> S {
    assert_eq!(x.len(), y.len(), "pearson: length mismatch");
    let (mx, vx, dx) = spread(x);
    let (my, vy, dy) = spread(y);
    if dx || dy {
        return S::zero();
    }
    let n = S::of_usize(x.len());
    let cov = x
        .iter()
        .zip(y)
        .fold(S::zero(), |a, (&p, &q)| a + (p - mx) * (q - my))
        / n;
    (cov / (vx.sqrt() * vy.sqrt())).max(-S::one()).min(S::one())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_negation() {
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin() + 0.1 * i as f64).collect();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &x) - 1.0).abs() < 1e-12);
        assert!((pearson(&x, &neg) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_is_zero() {
        let x: Vec<f64> = (0..20).map(f64::from).collect();
        assert_eq!(pearson(&x, &[3.0; 20]), 0.0);
    }
}
