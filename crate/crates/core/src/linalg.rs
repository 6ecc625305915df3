//! Small dense linear-algebra helpers.
//!
//! State dimensions in this crate are tiny (two or three), so matrices are
//! plain row-major `Vec<Vec<f64>>` and eigenvalues come from a classical
//! Jacobi sweep rather than an external solver.

use crate::error::{Error, Result};

pub type Matrix = Vec<Vec<f64>>;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add_scaled(a: &[f64], s: f64, b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + s * y).collect()
}

pub fn mat_vec(m: &Matrix, v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

pub fn is_symmetric(m: &Matrix, tol: f64) -> bool {
    let n = m.len();
    if m.iter().any(|r| r.len() != n) {
        return false;
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[i][j] - m[j][i]).abs() > tol {
                return false;
            }
        }
    }
    true
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn sym_eigenvalues(m: &Matrix) -> Result<Vec<f64>> {
    let n = m.len();
    if !is_symmetric(m, 1e-9) {
        return Err(Error::Shape("symmetric matrix required".into()));
    }
    let mut a = m.clone();
    for _sweep in 0..64 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[i][j] * a[i][j];
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(eig)
}

/// Spectral norm of a symmetric matrix (largest absolute eigenvalue).
pub fn sym_spectral_norm(m: &Matrix) -> Result<f64> {
    let eig = sym_eigenvalues(m)?;
    Ok(eig.iter().fold(0.0f64, |acc, e| acc.max(e.abs())))
}

/// Spectral norm of a general matrix via the symmetric product `M^T M`.
pub fn spectral_norm(m: &Matrix) -> Result<f64> {
    let rows = m.len();
    if rows == 0 {
        return Ok(0.0);
    }
    let cols = m[0].len();
    if m.iter().any(|r| r.len() != cols) {
        return Err(Error::Shape("ragged matrix".into()));
    }
    let mut mtm = vec![vec![0.0; cols]; cols];
    for i in 0..cols {
        for j in 0..cols {
            let mut s = 0.0;
            for row in m {
                s += row[i] * row[j];
            }
            mtm[i][j] = s;
        }
    }
    // Guard against asymmetry from rounding before the Jacobi sweep.
    for i in 0..cols {
        for j in (i + 1)..cols {
            let avg = 0.5 * (mtm[i][j] + mtm[j][i]);
            mtm[i][j] = avg;
            mtm[j][i] = avg;
        }
    }
    let eig = sym_eigenvalues(&mtm)?;
    Ok(eig.last().copied().unwrap_or(0.0).max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn eigenvalues_of_diagonal_matrix_are_its_entries() {
        let m = vec![vec![3.0, 0.0], vec![0.0, -1.0]];
        let eig = sym_eigenvalues(&m).unwrap();
        assert_relative_eq!(eig[0], -1.0, max_relative = 1e-12);
        assert_relative_eq!(eig[1], 3.0, max_relative = 1e-12);
    }

    #[test]
    fn eigenvalues_of_two_by_two_symmetric_match_closed_form() {
        // [[2, 1], [1, 2]] has eigenvalues 1 and 3.
        let m = vec![vec![2.0, 1.0], vec![1.0, 2.0]];
        let eig = sym_eigenvalues(&m).unwrap();
        assert_relative_eq!(eig[0], 1.0, max_relative = 1e-12);
        assert_relative_eq!(eig[1], 3.0, max_relative = 1e-12);
    }

    #[test]
    fn spectral_norm_matches_closed_form_singular_value() {
        // A = [[1, 2], [0, 3]]: largest singular value is sqrt(7 + 2*sqrt(10)).
        let m = vec![vec![1.0, 2.0], vec![0.0, 3.0]];
        let expected = (7.0 + 2.0 * 10.0f64.sqrt()).sqrt();
        assert_relative_eq!(spectral_norm(&m).unwrap(), expected, max_relative = 1e-10);
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        let m = vec![vec![1.0, 2.0], vec![0.0, 3.0]];
        assert!(sym_eigenvalues(&m).is_err());
    }

    #[test]
    fn three_by_three_eigenvalues_sum_to_trace() {
        let m = vec![
            vec![2.0, 0.5, 0.1],
            vec![0.5, 1.0, -0.3],
            vec![0.1, -0.3, 4.0],
        ];
        let eig = sym_eigenvalues(&m).unwrap();
        assert_relative_eq!(eig.iter().sum::<f64>(), 7.0, max_relative = 1e-10);
    }
}
