//! Fixed-step integration kernels.

/// One classical fourth-order Runge-Kutta step of `x' = field(t, x)`.
pub fn rk4_step<F>(field: F, t: f64, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    let k1 = field(t, x);
    let x2: Vec<f64> = x.iter().zip(&k1).map(|(a, k)| a + 0.5 * h * k).collect();
    let k2 = field(t + 0.5 * h, &x2);
    let x3: Vec<f64> = x.iter().zip(&k2).map(|(a, k)| a + 0.5 * h * k).collect();
    let k3 = field(t + 0.5 * h, &x3);
    let x4: Vec<f64> = x.iter().zip(&k3).map(|(a, k)| a + h * k).collect();
    let k4 = field(t + h, &x4);
    (0..x.len())
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Left-rectangle quadrature of cell-held values over a half-open window:
/// `h * sum_i values[i]`, componentwise.
///
/// The half-open convention means the value at the right endpoint of the
/// window never enters the sum, which keeps integral terms that end at the
/// current time strictly causal.
pub fn quad_halfopen(values: &[Vec<f64>], h: f64) -> Vec<f64> {
    let dim = values.first().map_or(0, |v| v.len());
    let mut acc = vec![0.0; dim];
    for v in values {
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    for a in &mut acc {
        *a *= h;
    }
    acc
}

/// Scalar convenience wrapper over [`quad_halfopen`].
pub fn quad_halfopen_scalar(values: &[f64], h: f64) -> f64 {
    values.iter().sum::<f64>() * h
}
