use num_complex::Complex64;

use super::{ComplexMatrix, SpinError};

/// Spin quantum numbers supported by the operator builder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Spin {
    Half,
    One,
}

impl Spin {
    /// Parses a spin quantum number given as a float (0.5 or 1.0).
    pub fn from_f64(s: f64) -> Result<Self, SpinError> {
        if s == 0.5 {
            Ok(Spin::Half)
        } else if s == 1.0 {
            Ok(Spin::One)
        } else {
            Err(SpinError::UnsupportedSpin(s))
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Spin::Half => 0.5,
            Spin::One => 1.0,
        }
    }

    pub fn multiplicity(self) -> usize {
        match self {
            Spin::Half => 2,
            Spin::One => 3,
        }
    }

    /// Magnetic quantum numbers in basis order, m = s, s-1, ..., -s.
    pub fn projections(self) -> Vec<f64> {
        let s = self.value();
        (0..self.multiplicity()).map(|k| s - k as f64).collect()
    }
}

/// Angular momentum matrices (units of ħ) in the Sz eigenbasis.
#[derive(Clone, Debug)]
pub struct SpinOperators {
    pub spin: Spin,
    pub sx: ComplexMatrix,
    pub sy: ComplexMatrix,
    pub sz: ComplexMatrix,
}

impl SpinOperators {
    pub fn new(spin: Spin) -> Self {
        let ms = spin.projections();
        let s = spin.value();
        let n = spin.multiplicity();
        let mut sz = ComplexMatrix::zeros(n);
        let mut splus = ComplexMatrix::zeros(n);
        for (i, &m) in ms.iter().enumerate() {
            sz[(i, i)] = Complex64::new(m, 0.0);
            // <m+1|S+|m> sits one row above the diagonal since m decreases with index.
            if i > 0 {
                let amp = (s * (s + 1.0) - m * (m + 1.0)).sqrt();
                splus[(i - 1, i)] = Complex64::new(amp, 0.0);
            }
        }
        let sminus = splus.adjoint();
        let sx = (&splus + &sminus).scale(0.5);
        let sy = (&splus - &sminus).scale_complex(Complex64::new(0.0, -0.5));
        Self { spin, sx, sy, sz }
    }

    pub fn dim(&self) -> usize {
        self.spin.multiplicity()
    }

    pub fn splus(&self) -> ComplexMatrix {
        &self.sx + &self.sy.scale_complex(Complex64::new(0.0, 1.0))
    }

    pub fn sminus(&self) -> ComplexMatrix {
        &self.sx - &self.sy.scale_complex(Complex64::new(0.0, 1.0))
    }

    pub fn components(&self) -> [&ComplexMatrix; 3] {
        [&self.sx, &self.sy, &self.sz]
    }
}

/// Standard spin matrices for `s` ∈ {½, 1}.
pub fn spin_operators(s: f64) -> Result<SpinOperators, SpinError> {
    Ok(SpinOperators::new(Spin::from_f64(s)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn max_diff(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
        (a - b).max_abs()
    }

    #[test]
    fn spin_one_sz_is_diag_one_zero_minus_one() {
        let ops = spin_operators(1.0).unwrap();
        assert_eq!(ops.sz, ComplexMatrix::from_diagonal(&[1.0, 0.0, -1.0]));
    }

    #[test]
    fn spin_half_sx_is_half_pauli_x() {
        let ops = spin_operators(0.5).unwrap();
        let expected =
            ComplexMatrix::from_real_rows(&[vec![0.0, 0.5], vec![0.5, 0.0]]).unwrap();
        assert!(max_diff(&ops.sx, &expected) < 1e-15);
    }

    #[test]
    fn unsupported_spin_is_rejected() {
        assert!(matches!(spin_operators(1.5), Err(SpinError::UnsupportedSpin(_))));
        assert!(matches!(spin_operators(0.0), Err(SpinError::UnsupportedSpin(_))));
    }

    #[test]
    fn ladder_operators_match_components() {
        let ops = spin_operators(1.0).unwrap();
        let sp = ops.splus();
        assert!((sp[(0, 1)].re - 2f64.sqrt()).abs() < 1e-15);
        assert!((sp[(1, 2)].re - 2f64.sqrt()).abs() < 1e-15);
        assert!(max_diff(&ops.sminus(), &sp.adjoint()) < 1e-15);
    }

    proptest! {
        #[test]
        fn angular_momentum_algebra_holds(s in prop::sample::select(vec![0.5, 1.0])) {
            let ops = spin_operators(s).unwrap();
            let i = Complex64::new(0.0, 1.0);
            let (x, y, z) = (&ops.sx, &ops.sy, &ops.sz);
            prop_assert!(max_diff(&x.commutator(y), &z.scale_complex(i)) < 1e-12);
            prop_assert!(max_diff(&y.commutator(z), &x.scale_complex(i)) < 1e-12);
            prop_assert!(max_diff(&z.commutator(x), &y.scale_complex(i)) < 1e-12);

            let casimir = &(&(x * x) + &(y * y)) + &(z * z);
            let expected = ComplexMatrix::identity(ops.dim()).scale(s * (s + 1.0));
            prop_assert!(max_diff(&casimir, &expected) < 1e-12);

            for (k, m) in ops.spin.projections().iter().enumerate() {
                prop_assert_eq!(z[(k, k)].re, *m);
            }
            for c in ops.components() {
                prop_assert!(c.is_hermitian(1e-15));
            }
        }
    }
}
