//! Central finite differences used to spot-check user-supplied derivatives.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Relative tolerance for agreement between a supplied derivative and its
/// central-difference approximation.
pub const DERIVATIVE_TOL: f64 = 1e-5;

fn check_points(dim: usize, radius: f64) -> Vec<Vec<f64>> {
    // Deterministic spread: the origin, scaled axis points, and a fixed set
    // of pseudo-random points inside the ball.
    let mut pts = vec![vec![0.0; dim]];
    for d in 0..dim {
        for s in [0.5, -1.0] {
            let mut p = vec![0.0; dim];
            p[d] = s * radius;
            pts.push(p);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..12 {
        let p: Vec<f64> = (0..dim).map(|_| rng.gen_range(-radius..radius)).collect();
        pts.push(p);
    }
    pts
}

pub fn central_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        let eps = 1e-5 * (1.0 + x[j].abs());
        xp[j] = x[j] + eps;
        let fp = f(&xp);
        xp[j] = x[j] - eps;
        let fm = f(&xp);
        xp[j] = x[j];
        grad[j] = (fp - fm) / (2.0 * eps);
    }
    grad
}

pub fn central_jacobian(f: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64], out_dim: usize) -> Matrix {
    let mut jac = vec![vec![0.0; x.len()]; out_dim];
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        let eps = 1e-5 * (1.0 + x[j].abs());
        xp[j] = x[j] + eps;
        let fp = f(&xp);
        xp[j] = x[j] - eps;
        let fm = f(&xp);
        xp[j] = x[j];
        for i in 0..out_dim {
            jac[i][j] = (fp[i] - fm[i]) / (2.0 * eps);
        }
    }
    jac
}

/// Verify a gradient closure against central differences on a deterministic
/// point spread inside a ball.
pub fn validate_gradient(
    what: &str,
    f: &dyn Fn(&[f64]) -> f64,
    grad: &dyn Fn(&[f64]) -> Vec<f64>,
    dim: usize,
    radius: f64,
) -> Result<()> {
    for x in check_points(dim, radius) {
        let supplied = grad(&x);
        if supplied.len() != dim {
            return Err(Error::Shape(format!(
                "{what}: gradient has {} components, expected {dim}",
                supplied.len()
            )));
        }
        let fd = central_gradient(f, &x);
        for j in 0..dim {
            let tol = DERIVATIVE_TOL * (1.0 + supplied[j].abs());
            if (supplied[j] - fd[j]).abs() > tol {
                return Err(Error::Config(format!(
                    "{what}: gradient component {j} at {x:?} is {}, finite differences give {}",
                    supplied[j], fd[j]
                )));
            }
        }
    }
    Ok(())
}

/// Verify a Jacobian closure against central differences.
pub fn validate_jacobian(
    what: &str,
    f: &dyn Fn(&[f64]) -> Vec<f64>,
    jac: &dyn Fn(&[f64]) -> Matrix,
    dim: usize,
    out_dim: usize,
    radius: f64,
) -> Result<()> {
    for x in check_points(dim, radius) {
        let supplied = jac(&x);
        if supplied.len() != out_dim || supplied.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape(format!(
                "{what}: Jacobian shape mismatch, expected {out_dim} x {dim}"
            )));
        }
        let fd = central_jacobian(f, &x, out_dim);
        for i in 0..out_dim {
            for j in 0..dim {
                let tol = DERIVATIVE_TOL * (1.0 + supplied[i][j].abs());
                if (supplied[i][j] - fd[i][j]).abs() > tol {
                    return Err(Error::Config(format!(
                        "{what}: Jacobian entry ({i}, {j}) at {x:?} is {}, finite differences give {}",
                        supplied[i][j], fd[i][j]
                    )));
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn correct_gradient_of_quadratic_passes() {
        let f = |x: &[f64]| 0.5 * x[0] * x[0] + 0.5 * x[1] * x[1];
        let g = |x: &[f64]| vec![x[0], x[1]];
        assert!(validate_gradient("V", &f, &g, 2, 4.0).is_ok());
    }

    #[test]
    fn scaled_gradient_is_rejected() {
        let f = |x: &[f64]| 0.5 * x[0] * x[0];
        let g = |x: &[f64]| vec![1.01 * x[0]];
        assert!(validate_gradient("V", &f, &g, 1, 4.0).is_err());
    }

    #[test]
    fn quartic_gradient_passes_at_moderate_radius() {
        let f = |x: &[f64]| x[0].powi(4) + x[0] * x[1];
        let g = |x: &[f64]| vec![4.0 * x[0].powi(3) + x[1], x[0]];
        assert!(validate_gradient("quartic", &f, &g, 2, 3.0).is_ok());
    }
}
