//! Cyclic Jacobi diagonalization for small dense Hermitian matrices.
//!
//! Each rotation first removes the phase of the pivot element with a diagonal
//! unitary and then applies a real Givens rotation, so the pair acts as a
//! single 2×2 unitary on rows/columns `p` and `q`. Dimensions here never exceed
//! a few dozen, so the O(n³) per sweep cost is irrelevant.

use num_complex::Complex64;

use super::{ComplexMatrix, SpinError};

const MAX_SWEEPS: usize = 100;
const HERMITIAN_TOL: f64 = 1e-12;

/// Eigenvalues (ascending) and eigenvectors (as columns) of a Hermitian matrix.
#[derive(Clone, Debug)]
pub struct Eigh {
    pub values: Vec<f64>,
    pub vectors: ComplexMatrix,
}

impl Eigh {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn vector(&self, k: usize) -> Vec<Complex64> {
        self.vectors.column(k)
    }
}

/// Diagonalizes a Hermitian matrix.
///
/// Eigenvalues come back ascending; each eigenvector's largest-magnitude
/// component is made real and positive. Ordering inside a degenerate cluster
/// is whatever the sweep produced.
pub fn eigh(h: &ComplexMatrix) -> Result<Eigh, SpinError> {
    h.check_finite()?;
    let defect = h.hermiticity_defect();
    if defect > HERMITIAN_TOL {
        return Err(SpinError::NotHermitian(defect));
    }
    let n = h.dim();
    let mut a = h.clone();
    // Symmetrize exactly so round-off in the input cannot bias the sweep.
    for i in 0..n {
        a[(i, i)] = Complex64::new(a[(i, i)].re, 0.0);
        for j in (i + 1)..n {
            let avg = (a[(i, j)] + a[(j, i)].conj()) * 0.5;
            a[(i, j)] = avg;
            a[(j, i)] = avg.conj();
        }
    }
    let mut v = ComplexMatrix::identity(n);
    let scale = a.frobenius_norm();

    let mut converged = n <= 1 || scale == 0.0;
    let mut sweep = 0;
    while !converged {
        if sweep == MAX_SWEEPS {
            return Err(SpinError::NoConvergence { sweeps: MAX_SWEEPS });
        }
        sweep += 1;
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].norm_sqr())
            .sum::<f64>()
            .sqrt();
        converged = off <= 1e-14 * scale || off < f64::MIN_POSITIVE;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.total_cmp(&a[(j, j)].re));

    let values: Vec<f64> = order.iter().map(|&k| a[(k, k)].re).collect();
    let mut vectors = ComplexMatrix::zeros(n);
    for (col, &k) in order.iter().enumerate() {
        let mut vec = v.column(k);
        fix_phase(&mut vec);
        for (row, z) in vec.into_iter().enumerate() {
            vectors[(row, col)] = z;
        }
    }
    Ok(Eigh { values, vectors })
}

fn rotate(a: &mut ComplexMatrix, v: &mut ComplexMatrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    let mag = apq.norm();
    if mag == 0.0 {
        return;
    }
    let app = a[(p, p)].re;
    let aqq = a[(q, q)].re;
    if mag < 1e-300 || mag <= f64::EPSILON * 1e-3 * (app.abs() + aqq.abs()) {
        a[(p, q)] = Complex64::new(0.0, 0.0);
        a[(q, p)] = Complex64::new(0.0, 0.0);
        return;
    }
    let phase = apq / mag;
    let theta = (aqq - app) / (2.0 * mag);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let t = if theta == 0.0 { 1.0 } else { t };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    // U = diag(1, conj(phase)) · [[c, s], [-s, c]] restricted to (p, q).
    let upp = Complex64::new(c, 0.0);
    let upq = Complex64::new(s, 0.0);
    let uqp = -phase.conj() * s;
    let uqq = phase.conj() * c;

    let n = a.dim();
    // A <- A U
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = akp * upp + akq * uqp;
        a[(k, q)] = akp * upq + akq * uqq;
    }
    // A <- U† A
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = upp.conj() * apk + uqp.conj() * aqk;
        a[(q, k)] = upq.conj() * apk + uqq.conj() * aqk;
    }
    a[(p, q)] = Complex64::new(0.0, 0.0);
    a[(q, p)] = Complex64::new(0.0, 0.0);
    a[(p, p)] = Complex64::new(a[(p, p)].re, 0.0);
    a[(q, q)] = Complex64::new(a[(q, q)].re, 0.0);
    // V <- V U
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = vkp * upp + vkq * uqp;
        v[(k, q)] = vkp * upq + vkq * uqq;
    }
}

/// Rotates the vector's global phase so its largest component is real positive.
/// Among components of equal magnitude (to 1e-12 relative) the first wins.
fn fix_phase(vec: &mut [Complex64]) {
    let max = vec.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if max == 0.0 {
        return;
    }
    let pivot = vec
        .iter()
        .position(|z| z.norm() >= max * (1.0 - 1e-12))
        .unwrap_or(0);
    let phase = vec[pivot].conj() / vec[pivot].norm();
    for z in vec.iter_mut() {
        *z *= phase;
    }
    vec[pivot] = Complex64::new(vec[pivot].re, 0.0);
}
