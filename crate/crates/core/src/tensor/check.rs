//! Gradient verification helpers.
//!
//! The finite-difference side is deliberately independent of the autodiff
//! machinery: it only re-runs a caller-supplied forward closure on perturbed
//! inputs, so it can serve as an oracle for the recorded backward passes.

/// Central finite differences of a scalar function at `x`.
/// The closure must be a pure function of the flat value vector.
pub fn central_diff<F: FnMut(&[f32]) -> f32>(x: &[f32], step: f32, mut eval: F) -> Vec<f32> {
    let mut grad = vec![0.0f32; x.len()];
    let mut buf = x.to_vec();
    for i in 0..x.len() {
        let orig = buf[i];
        buf[i] = orig + step;
        let fp = eval(&buf);
        buf[i] = orig - step;
        let fm = eval(&buf);
        buf[i] = orig;
        grad[i] = (fp - fm) / (2.0 * step);
    }
    grad
}

/// Central finite difference in a single coordinate.
pub fn central_diff_at<F: FnMut(&[f32]) -> f32>(
    x: &[f32],
    index: usize,
    step: f32,
    mut eval: F,
) -> f32 {
    let mut buf = x.to_vec();
    buf[index] = x[index] + step;
    let fp = eval(&buf);
    buf[index] = x[index] - step;
    let fm = eval(&buf);
    (fp - fm) / (2.0 * step)
}

/// Element-wise relative error with an absolute floor: entries where both
/// sides are below `atol` count as exact agreement (covers true zeros).
pub fn max_rel_err(analytic: &[f32], fd: &[f32], atol: f32) -> f32 {
    assert_eq!(analytic.len(), fd.len(), "gradient length mismatch");
    let mut worst = 0.0f32;
    for (&a, &b) in analytic.iter().zip(fd) {
        let mag = a.abs().max(b.abs());
        if mag < atol {
            continue;
        }
        let rel = (a - b).abs() / mag;
        if rel > worst {
            worst = rel;
        }
    }
    worst
}
