/// Central-difference gradient of `f` at `params`, all in 64-bit.
pub fn finite_diff_gradient<F>(mut f: F, params: &[f64], eps: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(eps > 0.0, "finite-difference step must be positive");
    let mut theta = params.to_vec();
    (0..theta.len())
        .map(|i| {
            let orig = theta[i];
            theta[i] = orig + eps;
            let plus = f(&theta);
            theta[i] = orig - eps;
            let minus = f(&theta);
            theta[i] = orig;
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    diff / norm(a).max(norm(b)).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let g = finite_diff_gradient(|x| x[0] * x[0], &[3.0], 1e-5);
        assert!((g[0] - 6.0).abs() < 1e-6, "{}", g[0]);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let g = finite_diff_gradient(|_| 4.2, &[1.0, -2.0, 0.5], 1e-4);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn softmax_cross_entropy_matches_p_minus_y() {
        let y = [0.0, 1.0, 0.0];
        let loss = |z: &[f64]| {
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            -(z[1] - lse)
        };
        let z = [0.3, -1.2, 2.0];
        let g = finite_diff_gradient(loss, &z, 1e-5);
        let m = 2.0f64;
        let denom: f64 = z.iter().map(|v| (v - m).exp()).sum();
        for i in 0..3 {
            let p = (z[i] - m).exp() / denom;
            assert!((g[i] - (p - y[i])).abs() < 1e-5);
        }
    }
}
