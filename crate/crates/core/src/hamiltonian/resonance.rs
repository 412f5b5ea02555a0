use super::{build_h_n, build_h_nv, dipolar_prefactor, HamiltonianError, PhysicalConstants, SystemParams};

const BISECTION_TOL_MHZ: f64 = 0.01;

/// Matching condition between the NV (0 ↔ −1) splitting and the N-electron
/// doublet in nuclear sector `m_i`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResonanceCondition {
    pub m_i: i8,
    /// Search interval in Gauss.
    pub bracket: (f64, f64),
}

impl ResonanceCondition {
    pub fn new(m_i: i8) -> Self {
        Self {
            m_i,
            bracket: (0.0, 1000.0),
        }
    }

    pub fn with_bracket(mut self, lo: f64, hi: f64) -> Self {
        self.bracket = (lo, hi);
        self
    }
}

/// NV (0 ↔ −1) splitting minus the N doublet splitting in sector `m_i`, MHz.
///
/// Both splittings are taken from the diagonal (secular) energies, so the
/// N doublet is g μ_B B + m_I·A.
pub fn resonance_mismatch(
    params: &SystemParams,
    constants: &PhysicalConstants,
    m_i: i8,
) -> f64 {
    let h_nv = build_h_nv(params, constants);
    let nv_split = h_nv[(2, 2)].re - h_nv[(1, 1)].re;

    let p = SystemParams {
        include_nucleus: true,
        include_hyperfine: true,
        ..*params
    };
    let h_n = build_h_n(&p, constants);
    let k = (1 - m_i) as usize;
    let n_split = h_n[(k, k)].re - h_n[(3 + k, 3 + k)].re;
    nv_split - n_split
}

/// Field where the NV (0 ↔ −1) and N-doublet splittings coincide, by bisection.
pub fn find_resonance_field(
    params: &SystemParams,
    constants: &PhysicalConstants,
    condition: &ResonanceCondition,
) -> Result<f64, HamiltonianError> {
    params.validate()?;
    if !(-1..=1).contains(&condition.m_i) {
        return Err(HamiltonianError::InvalidParameter {
            key: "condition.m_i",
            message: format!("must be -1, 0 or +1, got {}", condition.m_i),
        });
    }
    let f = |b: f64| resonance_mismatch(&params.with_field(b), constants, condition.m_i);
    let (mut lo, mut hi) = condition.bracket;
    let (mut flo, fhi) = (f(lo), f(hi));
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(HamiltonianError::NoSignChange { lo, hi });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm.abs() < BISECTION_TOL_MHZ * 1e-3 || (hi - lo) < 1e-12 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Sign class of the secular dipolar coupling as read from the ESR doublet.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CouplingSign {
    /// (−1, +½) lies below (−1, −½); θ beyond the magic angle, |1 − 3cos²θ| ≤ 1.
    Antiferromagnetic,
    /// (−1, −½) lies below (−1, +½); θ below the magic angle, |1 − 3cos²θ| ≤ 2.
    Ferromagnetic,
}

impl CouplingSign {
    pub fn max_angular_factor(self) -> f64 {
        match self {
            CouplingSign::Antiferromagnetic => 1.0,
            CouplingSign::Ferromagnetic => 2.0,
        }
    }
}

/// Largest separation compatible with an ESR doublet splitting (MHz).
pub fn distance_bound_from_splitting(
    splitting: f64,
    sign: CouplingSign,
    params: &SystemParams,
    constants: &PhysicalConstants,
) -> Result<f64, HamiltonianError> {
    if !(splitting.is_finite() && splitting > 0.0) {
        return Err(HamiltonianError::NonPositiveSplitting(splitting));
    }
    // splitting = d₀(r)·|1 − 3cos²θ| ≤ d₀(1 nm)/r³ · max factor
    let d0_at_1nm = dipolar_prefactor(1.0, params, constants)?;
    Ok((d0_at_1nm * sign.max_angular_factor() / splitting).cbrt())
}
