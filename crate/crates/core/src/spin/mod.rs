//! Complex linear algebra for small spin systems: dense operators, Kronecker
//! products and Hermitian diagonalization.

mod eigen;
mod matrix;
mod operators;

pub use eigen::{eigh, Eigh};
pub use matrix::{expectation, kron, kron_all, ComplexMatrix};
pub use operators::{spin_operators, Spin, SpinOperators};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpinError {
    #[error("unsupported spin quantum number {0}; expected 1/2 or 1")]
    UnsupportedSpin(f64),
    #[error("matrix has no rows")]
    Empty,
    #[error("matrix is not square ({rows} rows, row of length {cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix contains NaN or infinite entries")]
    NonFinite,
    #[error("matrix is not Hermitian (relative defect {0:.3e})")]
    NotHermitian(f64),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("state is not normalized (norm² = {0})")]
    NotNormalized(f64),
    #[error("Jacobi eigensolver did not converge in {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn expectation_values_of_basis_states() {
        let one = spin_operators(1.0).unwrap();
        let m0 = [
            Complex64::new(0.0, 0.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
        ];
        assert_eq!(expectation(&one.sz, &m0).unwrap(), Complex64::new(0.0, 0.0));

        let half = spin_operators(0.5).unwrap();
        let up = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
        assert!((expectation(&half.sz, &up).unwrap().re - 0.5).abs() < 1e-15);

        let r = std::f64::consts::FRAC_1_SQRT_2;
        let plus = [Complex64::new(r, 0.0), Complex64::new(r, 0.0)];
        let sx = expectation(&half.sx, &plus).unwrap();
        assert!((sx.re - 0.5).abs() < 1e-12);
        assert!(sx.im.abs() <= 1e-12);
    }
}
