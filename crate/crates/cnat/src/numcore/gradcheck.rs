//! Central finite-difference oracle for gradient verification.
//!
//! Deliberately independent of the tape's backward pass: it only re-runs a
//! forward closure on perturbed inputs. Meant to be used at f64.

/// Central finite differences of `forward` w.r.t. `data`.
pub fn central_diff(data: &[f64], eps: f64, mut forward: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut x = data.to_vec();
    let mut out = vec![0.0; data.len()];
    for i in 0..data.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let fp = forward(&x);
        x[i] = orig - eps;
        let fm = forward(&x);
        x[i] = orig;
        out[i] = (fp - fm) / (2.0 * eps);
    }
    out
}

/// Maximum relative error between analytic and numeric gradients, with a
/// floor so near-zero entries compare absolutely.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / (a.abs() + n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}
