use super::Array;

/// Central-difference estimate of `∂f/∂x_i` for each listed coordinate.
pub fn central_difference<F>(f: F, x: &Array, eps: f64, indices: &[usize]) -> Vec<f64>
where
    F: Fn(&Array) -> f64,
{
    let mut probe = x.clone();
    indices
        .iter()
        .map(|&i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + eps;
            let plus = f(&probe);
            probe.data_mut()[i] = orig - eps;
            let minus = f(&probe);
            probe.data_mut()[i] = orig;
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

/// Max over the listed coordinates of
/// `|analytic − central difference| / (|analytic| + 1e-12)`.
pub fn finite_difference_check_at<F>(f: F, analytic: &Array, x: &Array, eps: f64, indices: &[usize]) -> f64
where
    F: Fn(&Array) -> f64,
{
    assert_eq!(analytic.len(), x.len(), "gradient and point differ in size");
    let numeric = central_difference(f, x, eps, indices);
    indices
        .iter()
        .zip(numeric)
        .map(|(&i, fd)| {
            let a = analytic.data()[i];
            (a - fd).abs() / (a.abs() + 1e-12)
        })
        .fold(0.0, f64::max)
}

/// [`finite_difference_check_at`] over every coordinate of `x`.
pub fn finite_difference_check<F>(f: F, analytic: &Array, x: &Array, eps: f64) -> f64
where
    F: Fn(&Array) -> f64,
{
    let all: Vec<usize> = (0..x.len()).collect();
    finite_difference_check_at(f, analytic, x, eps, &all)
}
