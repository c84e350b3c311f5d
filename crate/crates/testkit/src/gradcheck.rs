//! Finite-difference helpers for checking analytic gradients.

/// Central-difference partial derivative of `f` with respect to `x[i]`.
pub fn partial<F: FnMut(&[f32]) -> f64>(mut f: F, x: &[f32], i: usize, h: f32) -> f64 {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[i] += h;
    xm[i] -= h;
    (f(&xp) - f(&xm)) / (2.0 * f64::from(h))
}

/// Central-difference derivative of `f` along direction `dir`.
pub fn directional<F: FnMut(&[f32]) -> f64>(mut f: F, x: &[f32], dir: &[f32], h: f32) -> f64 {
    assert_eq!(x.len(), dir.len());
    let step = |sgn: f32| -> Vec<f32> {
        x.iter()
            .zip(dir)
            .map(|(&xi, &di)| xi + sgn * h * di)
            .collect()
    };
    let (fp, fm) = (f(&step(1.0)), f(&step(-1.0)));
    (fp - fm) / (2.0 * f64::from(h))
}

/// Relative gap between an analytic and a numeric derivative, with a floor so
/// near-zero derivatives compare absolutely.
pub fn relative_gap(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}
