//! Dense vector kernels over `f64` slices.

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// y := y + alpha * x
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(alpha: f64, x: &mut [f64]) {
    for xi in x.iter_mut() {
        *xi *= alpha;
    }
}

pub fn all_finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}

/// x0 + sum_i coeffs[i] * basis[i]
pub fn combine(x0: &[f64], basis: &[Vec<f64>], coeffs: &[f64]) -> Vec<f64> {
    let mut x = x0.to_vec();
    for (v, &c) in basis.iter().zip(coeffs) {
        axpy(c, v, &mut x);
    }
    x
}
