//! Central finite-difference gradient checking.
//!
//! Used by the unit tests of every primitive and by the acceptance suite's
//! end-to-end model check. Independent of the analytic backward rules by
//! construction: it only calls the forward path.

use super::Scalar;

/// Central-difference gradient of a scalar function of `x`.
/// `h` is scaled per coordinate by (1 + |x_i|).
pub fn finite_diff<S: Scalar, F>(mut f: F, x: &[S], h: f64) -> Vec<f64>
where
    F: FnMut(&[S]) -> f64,
{
    let mut xs = x.to_vec();
    let mut grad = vec![0.0f64; x.len()];
    for i in 0..x.len() {
        let orig = xs[i];
        let step = h * (1.0 + orig.to_f64().abs());
        xs[i] = S::from_f64(orig.to_f64() + step);
        let up = f(&xs);
        xs[i] = S::from_f64(orig.to_f64() - step);
        let down = f(&xs);
        xs[i] = orig;
        grad[i] = (up - down) / (2.0 * step);
    }
    grad
}

/// Max over coordinates of |a - n| / max(|a|, |n|, floor).
pub fn max_rel_err<S: Scalar>(analytic: &[S], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric) {
        let a = a.to_f64();
        let denom = a.abs().max(n.abs()).max(floor);
        let err = (a - n).abs() / denom;
        if err > worst {
            worst = err;
        }
    }
    worst
}
