//! Least-squares fits of dip spectra and relaxation curves.
//!
//! Both models are separable: the amplitudes and offsets enter linearly and
//! are solved exactly for every trial of the nonlinear parameters (centers,
//! widths, decay time), which are searched with a simplex.

mod decay;
mod lorentzian;
pub mod simplex;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub use decay::{exp_decay, fit_exp_decay};
pub use lorentzian::{
    double_lorentzian, fit_double_lorentzian, fit_double_lorentzian_with, DoubleLorentzianOptions,
    RELIABLE_SEPARATION,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need at least {needed} points, got {found}")]
    TooFewPoints { needed: usize, found: usize },
    #[error("x and y lengths differ ({x} vs {y})")]
    LengthMismatch { x: usize, y: usize },
    #[error("data contain non-finite values")]
    NonFinite,
    #[error("no dynamic range in the data (max - min = {0})")]
    NoDynamicRange(f64),
    #[error("both amplitudes are zero; polarization undefined")]
    ZeroAmplitudes,
    #[error("amplitudes must be >= 0, got ({0}, {1})")]
    NegativeAmplitude(f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub model: &'static str,
    pub names: Vec<&'static str>,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    pub sse: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Set when the model components cannot be separated reliably.
    pub unreliable: bool,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| *n == name).map(|i| self.values[i])
    }

    pub fn stderr_of(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| *n == name).map(|i| self.stderr[i])
    }

    pub fn value(&self, name: &str) -> f64 {
        self.get(name)
            .unwrap_or_else(|| panic!("{} fit has no parameter `{name}`", self.model))
    }
}

/// (ΔI[−½] − ΔI[+½]) / (ΔI[−½] + ΔI[+½]).
pub fn polarization_from_amplitudes(di_minus: f64, di_plus: f64) -> Result<f64, FitError> {
    if !(di_minus >= 0.0 && di_plus >= 0.0) {
        return Err(FitError::NegativeAmplitude(di_minus, di_plus));
    }
    let total = di_minus + di_plus;
    if total == 0.0 {
        return Err(FitError::ZeroAmplitudes);
    }
    Ok((di_minus - di_plus) / total)
}

fn check_series(x: &[f64], y: &[f64], needed: usize) -> Result<(), FitError> {
    if x.len() != y.len() {
        return Err(FitError::LengthMismatch {
            x: x.len(),
            y: y.len(),
        });
    }
    if x.len() < needed {
        return Err(FitError::TooFewPoints {
            needed,
            found: x.len(),
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(FitError::NonFinite);
    }
    Ok(())
}

/// Least squares for `design · β ≈ y`; returns (β, sse).
fn linear_lsq(design: &DMatrix<f64>, y: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
    let beta = design.clone().svd(true, true).solve(y, 1e-14).ok()?;
    let sse = (y - design * &beta).norm_squared();
    Some((beta, sse))
}

/// Standard errors from s² (JᵀJ)⁺ with a central-difference Jacobian.
fn gauss_newton_stderr<F>(model: F, x: &[f64], params: &[f64], sse: f64) -> Vec<f64>
where
    F: Fn(f64, &[f64]) -> f64,
{
    let (n, k) = (x.len(), params.len());
    if n <= k {
        return vec![f64::NAN; k];
    }
    let mut jac = DMatrix::zeros(n, k);
    for j in 0..k {
        let h = if params[j] != 0.0 {
            1e-6 * params[j].abs()
        } else {
            1e-6
        };
        let mut up = params.to_vec();
        let mut down = params.to_vec();
        up[j] += h;
        down[j] -= h;
        for i in 0..n {
            jac[(i, j)] = (model(x[i], &up) - model(x[i], &down)) / (2.0 * h);
        }
    }
    let s2 = sse / (n - k) as f64;
    let jtj = jac.transpose() * &jac;
    let max_sv = jtj.singular_values().max();
    match jtj.pseudo_inverse(1e-13 * max_sv.max(f64::MIN_POSITIVE)) {
        Ok(cov) => (0..k).map(|j| (s2 * cov[(j, j)]).max(0.0).sqrt()).collect(),
        Err(_) => vec![f64::NAN; k],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polarization_estimator() {
        assert_eq!(polarization_from_amplitudes(3.0, 1.0).unwrap(), 0.5);
        assert_eq!(polarization_from_amplitudes(2.5, 2.5).unwrap(), 0.0);
        assert_eq!(polarization_from_amplitudes(4.0, 0.0).unwrap(), 1.0);
        assert_eq!(polarization_from_amplitudes(0.0, 4.0).unwrap(), -1.0);
        assert_eq!(polarization_from_amplitudes(0.0, 0.0), Err(FitError::ZeroAmplitudes));
        assert!(polarization_from_amplitudes(-1.0, 1.0).is_err());
    }
}
