//! Spin Hamiltonian of an NV center coupled to a nitrogen electron spin and,
//! optionally, the nitrogen's ¹⁴N nucleus.
//!
//! Energies are frequencies in MHz (h = 1), fields in Gauss, distances in nm.
//! The product basis is NV(m = +1, 0, −1) ⊗ N-electron(m = +½, −½) ⊗
//! nucleus(m = +1, 0, −1), with the NV index varying slowest.

mod levels;
mod resonance;

pub use levels::{level_diagram, transition_frequency};
pub use resonance::{
    distance_bound_from_splitting, find_resonance_field, resonance_mismatch, CouplingSign,
    ResonanceCondition,
};

use std::fmt;

use num_complex::Complex64;
use thiserror::Error;

use crate::spin::{eigh, kron, kron_all, ComplexMatrix, Eigh, Spin, SpinError, SpinOperators};
use crate::sweep::SweepError;

/// Bohr magneton in J/T (CODATA 2018).
const BOHR_MAGNETON_J_PER_T: f64 = 9.274_010_078_3e-24;
/// Smallest centre separation accepted by the dipolar term.
pub const MIN_SEPARATION_NM: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HamiltonianError {
    #[error("{key}: {message}")]
    InvalidParameter { key: &'static str, message: String },
    #[error("separation {0} nm is below the {MIN_SEPARATION_NM} nm minimum")]
    SeparationTooSmall(f64),
    #[error("field grid must be strictly monotone ({0})")]
    BadGrid(SweepError),
    #[error("level tracking lost at B = {field} G (overlap {overlap:.3} < 0.5); refine the grid")]
    TrackingLost { field: f64, overlap: f64 },
    #[error("state {label} is ambiguous: dominant eigenvector weight {weight:.3} < 0.7")]
    AmbiguousLabel { label: JointState, weight: f64 },
    #[error("state {0} does not exist in this Hilbert space")]
    UnknownLabel(JointState),
    #[error("no sign change of the resonance mismatch in [{lo}, {hi}] G")]
    NoSignChange { lo: f64, hi: f64 },
    #[error("splitting must be positive, got {0} MHz")]
    NonPositiveSplitting(f64),
    #[error(transparent)]
    Spin(#[from] SpinError),
}

/// Physical constants in the frequency-unit convention.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhysicalConstants {
    /// μ_B / h in MHz per Gauss.
    pub bohr_mhz_per_gauss: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            bohr_mhz_per_gauss: 1.399_624_49,
        }
    }
}

impl PhysicalConstants {
    /// μ₀ μ_B² / (4π h) in MHz·nm³ (g = 1 for both spins).
    pub fn dipolar_mhz_nm3(&self) -> f64 {
        // (μ₀/4π) μ_B (μ_B/h), with μ_B/h converted from MHz/G to Hz/T and r in nm.
        1e-7 * BOHR_MAGNETON_J_PER_T * (self.bohr_mhz_per_gauss * 1e10) * 1e27 * 1e-6
    }
}

/// Static parameters of the two-centre system.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SystemParams {
    /// Zero-field splitting, MHz.
    pub d: f64,
    pub g_nv: f64,
    pub g_n: f64,
    /// ¹⁴N hyperfine constant, MHz.
    pub a: f64,
    /// Field along the NV axis, Gauss.
    pub b: f64,
    pub include_nucleus: bool,
    pub include_hyperfine: bool,
    /// Allows hyperfine constants other than 86 or 114 MHz.
    pub custom_a: bool,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            d: 2880.0,
            g_nv: 2.0,
            g_n: 2.0,
            a: 86.0,
            b: 0.0,
            include_nucleus: false,
            include_hyperfine: true,
            custom_a: false,
        }
    }
}

impl SystemParams {
    pub fn with_field(mut self, b: f64) -> Self {
        self.b = b;
        self
    }

    pub fn validate(&self) -> Result<(), HamiltonianError> {
        let bad = |key, message: String| Err(HamiltonianError::InvalidParameter { key, message });
        if !(self.d.is_finite() && self.d > 0.0) {
            return bad("system.d", format!("must be > 0 MHz, got {}", self.d));
        }
        for (key, g) in [("system.g_nv", self.g_nv), ("system.g_n", self.g_n)] {
            if !(g > 1.5 && g < 2.5) {
                return bad(key, format!("must lie in (1.5, 2.5), got {g}"));
            }
        }
        if !(self.b.is_finite() && self.b >= 0.0) {
            return bad("system.b", format!("must be >= 0 G, got {}", self.b));
        }
        if !self.a.is_finite() || self.a < 0.0 {
            return bad("system.a", format!("must be >= 0 MHz, got {}", self.a));
        }
        if !self.custom_a && self.a != 86.0 && self.a != 114.0 {
            return bad(
                "system.a",
                format!("must be 86 or 114 MHz unless custom_a is set, got {}", self.a),
            );
        }
        Ok(())
    }

    fn nv_zeeman(&self, c: &PhysicalConstants) -> f64 {
        self.g_nv * c.bohr_mhz_per_gauss * self.b
    }

    fn n_zeeman(&self, c: &PhysicalConstants) -> f64 {
        self.g_n * c.bohr_mhz_per_gauss * self.b
    }

    pub fn dim(&self) -> usize {
        if self.include_nucleus {
            18
        } else {
            6
        }
    }
}

/// Position of the nitrogen relative to the NV center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DipoleGeometry {
    /// Separation, nm.
    pub r: f64,
    /// Polar angle between r̂ and ẑ, degrees.
    pub theta: f64,
    /// Azimuth of r̂, degrees.
    pub phi: f64,
}

impl DipoleGeometry {
    pub fn new(r: f64, theta: f64, phi: f64) -> Self {
        Self { r, theta, phi }
    }

    pub fn validate(&self) -> Result<(), HamiltonianError> {
        if !(self.r.is_finite() && self.r > MIN_SEPARATION_NM) {
            return Err(HamiltonianError::SeparationTooSmall(self.r));
        }
        if !(0.0..=180.0).contains(&self.theta) {
            return Err(HamiltonianError::InvalidParameter {
                key: "geometry.theta",
                message: format!("must lie in [0, 180] degrees, got {}", self.theta),
            });
        }
        if !(0.0..360.0).contains(&self.phi) {
            return Err(HamiltonianError::InvalidParameter {
                key: "geometry.phi",
                message: format!("must lie in [0, 360) degrees, got {}", self.phi),
            });
        }
        Ok(())
    }

    pub fn unit_vector(&self) -> [f64; 3] {
        let (t, p) = (self.theta.to_radians(), self.phi.to_radians());
        [t.sin() * p.cos(), t.sin() * p.sin(), t.cos()]
    }
}

/// Joint spin projection used as a product-basis label.
///
/// The N-electron projection is stored doubled (±1 for ±½).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct JointState {
    pub m_nv: i8,
    pub two_m_n: i8,
    pub m_i: Option<i8>,
}

impl JointState {
    pub fn new(m_nv: i8, two_m_n: i8) -> Self {
        Self {
            m_nv,
            two_m_n,
            m_i: None,
        }
    }

    pub fn with_nucleus(m_nv: i8, two_m_n: i8, m_i: i8) -> Self {
        Self {
            m_nv,
            two_m_n,
            m_i: Some(m_i),
        }
    }

    pub fn m_n(&self) -> f64 {
        self.two_m_n as f64 / 2.0
    }

    /// Product-basis index, or `None` when the label does not fit the space.
    pub fn index(&self, include_nucleus: bool) -> Option<usize> {
        let nv = match self.m_nv {
            1 => 0,
            0 => 1,
            -1 => 2,
            _ => return None,
        };
        let n = match self.two_m_n {
            1 => 0,
            -1 => 1,
            _ => return None,
        };
        match (include_nucleus, self.m_i) {
            (false, None) => Some(nv * 2 + n),
            (true, Some(mi)) if (-1..=1).contains(&mi) => {
                Some((nv * 2 + n) * 3 + (1 - mi) as usize)
            }
            _ => None,
        }
    }

    /// All product-basis labels in index order.
    pub fn basis(include_nucleus: bool) -> Vec<JointState> {
        let mut out = Vec::new();
        for m_nv in [1, 0, -1] {
            for two_m_n in [1, -1] {
                if include_nucleus {
                    for m_i in [1, 0, -1] {
                        out.push(JointState::with_nucleus(m_nv, two_m_n, m_i));
                    }
                } else {
                    out.push(JointState::new(m_nv, two_m_n));
                }
            }
        }
        out
    }
}

impl fmt::Display for JointState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mn = if self.two_m_n > 0 { "+1/2" } else { "-1/2" };
        match self.m_i {
            None => write!(f, "({:+},{})", self.m_nv, mn),
            Some(mi) => write!(f, "({:+},{},{:+})", self.m_nv, mn, mi),
        }
    }
}

/// NV term D·Sz² + g μ_B B Sz, 3×3 in the m = +1, 0, −1 basis.
pub fn build_h_nv(params: &SystemParams, constants: &PhysicalConstants) -> ComplexMatrix {
    let s = SpinOperators::new(Spin::One);
    let sz2 = &s.sz * &s.sz;
    &sz2.scale(params.d) + &s.sz.scale(params.nv_zeeman(constants))
}

/// N-electron Zeeman term plus, when enabled, the isotropic hyperfine A·S·I.
///
/// 2×2 without the nucleus, 6×6 (electron ⊗ nucleus) with it.
pub fn build_h_n(params: &SystemParams, constants: &PhysicalConstants) -> ComplexMatrix {
    let s = SpinOperators::new(Spin::Half);
    let zeeman = s.sz.scale(params.n_zeeman(constants));
    if !params.include_nucleus {
        return zeeman;
    }
    let i = SpinOperators::new(Spin::One);
    let mut h = kron(&zeeman, &ComplexMatrix::identity(3));
    if params.include_hyperfine && params.a != 0.0 {
        for (sc, ic) in s.components().into_iter().zip(i.components()) {
            h = &h + &kron(sc, ic).scale(params.a);
        }
    }
    h
}

/// Dipolar prefactor μ₀ g_NV g_N μ_B² / (4π r³ h) in MHz.
pub fn dipolar_prefactor(
    r_nm: f64,
    params: &SystemParams,
    constants: &PhysicalConstants,
) -> Result<f64, HamiltonianError> {
    if !(r_nm.is_finite() && r_nm > MIN_SEPARATION_NM) {
        return Err(HamiltonianError::SeparationTooSmall(r_nm));
    }
    Ok(params.g_nv * params.g_n * constants.dipolar_mhz_nm3() / r_nm.powi(3))
}

/// Coefficient of Sz^NV Sz^N in the dipolar term, d₀(1 − 3cos²θ).
pub fn dipolar_zz_coefficient(
    geometry: &DipoleGeometry,
    params: &SystemParams,
    constants: &PhysicalConstants,
) -> Result<f64, HamiltonianError> {
    let d0 = dipolar_prefactor(geometry.r, params, constants)?;
    let c = geometry.theta.to_radians().cos();
    Ok(d0 * (1.0 - 3.0 * c * c))
}

/// d₀ [S^NV·S^N − 3 (S^NV·r̂)(S^N·r̂)] on NV ⊗ N-electron (6×6).
pub fn build_h_dip(
    geometry: &DipoleGeometry,
    params: &SystemParams,
    constants: &PhysicalConstants,
) -> Result<ComplexMatrix, HamiltonianError> {
    geometry.validate()?;
    let d0 = dipolar_prefactor(geometry.r, params, constants)?;
    let nv = SpinOperators::new(Spin::One);
    let n = SpinOperators::new(Spin::Half);
    let rhat = geometry.unit_vector();

    let mut h = ComplexMatrix::zeros(6);
    for (a, b) in nv.components().into_iter().zip(n.components()) {
        h = &h + &kron(a, b);
    }
    let project = |ops: &SpinOperators| -> ComplexMatrix {
        let [x, y, z] = ops.components();
        &(&x.scale(rhat[0]) + &y.scale(rhat[1])) + &z.scale(rhat[2])
    };
    let along = kron(&project(&nv), &project(&n));
    h = &h - &along.scale(3.0);
    Ok(h.scale(d0))
}

/// Full Hamiltonian on the tensor-product space.
#[derive(Clone, Debug)]
pub struct CompositeHamiltonian {
    pub params: SystemParams,
    pub geometry: Option<DipoleGeometry>,
    pub constants: PhysicalConstants,
    pub h_total: ComplexMatrix,
    /// Dipolar part alone, embedded in the full space.
    pub h_dip: Option<ComplexMatrix>,
}

/// H_NV ⊗ 1 + 1 ⊗ H_N + H_dip.
pub fn build_total(
    params: &SystemParams,
    geometry: Option<&DipoleGeometry>,
    constants: &PhysicalConstants,
) -> Result<CompositeHamiltonian, HamiltonianError> {
    params.validate()?;
    let h_nv = build_h_nv(params, constants);
    let h_n = build_h_n(params, constants);
    let nuc_dim = if params.include_nucleus { 3 } else { 1 };
    let n_dim = 2 * nuc_dim;

    let mut h = &kron(&h_nv, &ComplexMatrix::identity(n_dim)) + &kron(&ComplexMatrix::identity(3), &h_n);
    let h_dip = match geometry {
        Some(g) => {
            let dip6 = build_h_dip(g, params, constants)?;
            let full = kron_all(&[&dip6, &ComplexMatrix::identity(nuc_dim)]);
            h = &h + &full;
            Some(full)
        }
        None => None,
    };
    Ok(CompositeHamiltonian {
        params: *params,
        geometry: geometry.copied(),
        constants: *constants,
        h_total: h,
        h_dip,
    })
}

impl CompositeHamiltonian {
    pub fn dim(&self) -> usize {
        self.h_total.dim()
    }

    pub fn basis(&self) -> Vec<JointState> {
        JointState::basis(self.params.include_nucleus)
    }

    pub fn index_of(&self, label: &JointState) -> Result<usize, HamiltonianError> {
        label
            .index(self.params.include_nucleus)
            .ok_or(HamiltonianError::UnknownLabel(*label))
    }

    pub fn eigh(&self) -> Result<Eigh, HamiltonianError> {
        Ok(eigh(&self.h_total)?)
    }

    /// Diagonal element of the total Hamiltonian in the product basis.
    pub fn secular_energy(&self, label: &JointState) -> Result<f64, HamiltonianError> {
        let i = self.index_of(label)?;
        Ok(self.h_total[(i, i)].re)
    }

    /// Matrix element ⟨from|H|to⟩.
    pub fn element(
        &self,
        from: &JointState,
        to: &JointState,
    ) -> Result<Complex64, HamiltonianError> {
        Ok(self.h_total[(self.index_of(from)?, self.index_of(to)?)])
    }

    /// Magnitude of ⟨from|H_dip|to⟩ (zero without geometry).
    pub fn dipolar_element(
        &self,
        from: &JointState,
        to: &JointState,
    ) -> Result<f64, HamiltonianError> {
        let (i, j) = (self.index_of(from)?, self.index_of(to)?);
        Ok(self.h_dip.as_ref().map_or(0.0, |h| h[(i, j)].norm()))
    }
}
