//! Largest eigenvalue of symmetric PSD matrices.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative Rayleigh-quotient change at which power iteration stops.
pub const POWER_TOLERANCE: f64 = 1e-8;
/// Iteration cap before falling back to a full eigensolve.
pub const POWER_MAX_ITERATIONS: usize = 1000;
/// Largest dimension handed to the full eigensolver.
pub const FULL_EIGEN_LIMIT: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenMethod {
    PowerIteration,
    FullEigensolve,
    /// Power iteration did not converge and the matrix was too large for the
    /// fallback; the last Rayleigh quotient is reported.
    Unconverged,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenSummary {
    pub lambda_max: f64,
    pub iterations: usize,
    pub method: EigenMethod,
}

/// Power iteration from a fixed start vector, so the result is reproducible.
pub fn lambda_max(matrix: &DMatrix<f64>) -> EigenSummary {
    let n = matrix.nrows();
    assert_eq!(n, matrix.ncols(), "matrix must be square");
    if n == 0 {
        return EigenSummary {
            lambda_max: 0.0,
            iterations: 0,
            method: EigenMethod::PowerIteration,
        };
    }
    let mut x = DVector::from_fn(n, |i, _| 1.0 + 0.01 * ((i * 7919) % 101) as f64 / 101.0);
    x /= x.norm();
    let mut y = DVector::zeros(n);
    let mut rayleigh = f64::NAN;
    for it in 1..=POWER_MAX_ITERATIONS {
        matrix.mul_to(&x, &mut y);
        let next = x.dot(&y);
        let norm = y.norm();
        if norm == 0.0 {
            return EigenSummary {
                lambda_max: 0.0,
                iterations: it,
                method: EigenMethod::PowerIteration,
            };
        }
        std::mem::swap(&mut x, &mut y);
        x /= norm;
        if (next - rayleigh).abs() <= POWER_TOLERANCE * next.abs().max(1.0) {
            return EigenSummary {
                lambda_max: next,
                iterations: it,
                method: EigenMethod::PowerIteration,
            };
        }
        rayleigh = next;
    }
    if n <= FULL_EIGEN_LIMIT {
        let eig = SymmetricEigen::new(matrix.clone());
        let top = eig
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        EigenSummary {
            lambda_max: top,
            iterations: POWER_MAX_ITERATIONS,
            method: EigenMethod::FullEigensolve,
        }
    } else {
        EigenSummary {
            lambda_max: rayleigh,
            iterations: POWER_MAX_ITERATIONS,
            method: EigenMethod::Unconverged,
        }
    }
}
