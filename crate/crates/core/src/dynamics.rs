//! Classical rate model for the joint NV (m = 0, −1) and N-electron populations.
//!
//! The coherent dipolar flip-flop is replaced by a golden-rule rate with a
//! Lorentzian of half-width γ (MHz, HWHM):
//!
//! ```text
//! W = 2π b⊥² γ / (γ² + Δ²)      [1/μs, with b⊥, γ, Δ in MHz]
//! ```
//!
//! The width seen by the flip-flop is `gamma2 + gamma_pol / (4π)`: optical
//! pumping of the NV shortens the pair coherence, which broadens the resonance
//! as laser power grows. Energies entering the model are the diagonal
//! (secular) elements of the Hamiltonian in the product basis.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::hamiltonian::{CompositeHamiltonian, HamiltonianError, JointState};

const RK4_MAX_STEPS: usize = 50_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("flip-flop rate needs a dipolar geometry")]
    MissingGeometry,
    #[error("state space and Hamiltonian disagree on the nuclear spin (space: {space}, hamiltonian: {hamiltonian})")]
    InconsistentNucleus { space: bool, hamiltonian: bool },
    #[error("invalid rate parameter {key}: {message}")]
    InvalidRate { key: &'static str, message: String },
    #[error("steady state is not unique: {0} closed classes in the rate graph")]
    Disconnected(usize),
    #[error("steady-state solve failed (singular system)")]
    Singular,
    #[error("population vector has {found} entries, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid population vector: {0}")]
    InvalidPopulation(String),
    #[error("negative evolution time {0} μs")]
    NegativeTime(f64),
    #[error("integration step underflow: {steps} steps needed for t = {t} μs")]
    StepUnderflow { steps: usize, t: f64 },
    #[error(transparent)]
    Hamiltonian(#[from] HamiltonianError),
}

/// Ordered joint labels with m_NV ∈ {0, −1}.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSpace {
    labels: Vec<JointState>,
    include_nucleus: bool,
}

impl StateSpace {
    pub fn new(include_nucleus: bool) -> Self {
        let labels = JointState::basis(include_nucleus)
            .into_iter()
            .filter(|s| s.m_nv != 1)
            .collect();
        Self {
            labels,
            include_nucleus,
        }
    }

    pub fn for_hamiltonian(h: &CompositeHamiltonian) -> Self {
        Self::new(h.params.include_nucleus)
    }

    pub fn labels(&self) -> &[JointState] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn include_nucleus(&self) -> bool {
        self.include_nucleus
    }

    pub fn index_of(&self, s: &JointState) -> Option<usize> {
        self.labels.iter().position(|l| l == s)
    }

    fn nuclear_projections(&self) -> Vec<Option<i8>> {
        if self.include_nucleus {
            vec![Some(1), Some(0), Some(-1)]
        } else {
            vec![None]
        }
    }

    fn state(&self, m_nv: i8, two_m_n: i8, m_i: Option<i8>) -> usize {
        let s = JointState { m_nv, two_m_n, m_i };
        self.index_of(&s).expect("label belongs to the space")
    }
}

/// Incoherent rates and readout parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateParams {
    /// Optical NV polarization rate into m = 0, 1/μs.
    pub gamma_pol: f64,
    /// Pair dephasing width (HWHM) entering the flip-flop Lorentzian, MHz.
    pub gamma2: f64,
    /// N-electron relaxation time, μs; infinite disables the channel.
    pub t1_n: f64,
    /// ESR-driven transition rate at line center, 1/μs.
    pub esr_rate: f64,
    /// ESR response half-width (HWHM), MHz.
    pub esr_linewidth: f64,
    /// Hyperfine flip-flop rate (−½, m_I) → (+½, m_I − 1), 1/μs.
    pub w_hf: f64,
    /// Nuclear relaxation time, μs; infinite disables the channel.
    pub t1_nuc: f64,
    /// Photon rate from m_NV = 0, counts/μs.
    pub pl_rate: f64,
    /// Fractional PL reduction for m_NV = −1.
    pub pl_contrast: f64,
}

impl Default for RateParams {
    fn default() -> Self {
        Self {
            gamma_pol: 0.0,
            gamma2: 0.1,
            t1_n: 75.0,
            esr_rate: 20.0,
            esr_linewidth: 1.0,
            w_hf: 0.0,
            t1_nuc: 10_000.0,
            pl_rate: 50.0,
            pl_contrast: 0.3,
        }
    }
}

impl RateParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let bad = |key, message: String| Err(DynamicsError::InvalidRate { key, message });
        for (key, v) in [
            ("gamma_pol", self.gamma_pol),
            ("gamma2", self.gamma2),
            ("esr_rate", self.esr_rate),
            ("esr_linewidth", self.esr_linewidth),
            ("w_hf", self.w_hf),
            ("pl_rate", self.pl_rate),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(key, format!("must be finite and >= 0, got {v}"));
            }
        }
        if !(self.t1_n > 0.0) {
            return bad("t1_n", format!("must be > 0 μs, got {}", self.t1_n));
        }
        if !(self.t1_nuc > 0.0) {
            return bad("t1_nuc", format!("must be > 0 μs, got {}", self.t1_nuc));
        }
        if !(0.0..1.0).contains(&self.pl_contrast) {
            return bad("pl_contrast", format!("must lie in [0, 1), got {}", self.pl_contrast));
        }
        Ok(())
    }

    /// Same parameters with the laser switched off.
    pub fn dark(&self) -> Self {
        Self {
            gamma_pol: 0.0,
            ..*self
        }
    }

    /// Flip-flop Lorentzian half-width including optical broadening, MHz.
    pub fn flipflop_width(&self) -> f64 {
        self.gamma2 + self.gamma_pol / (4.0 * PI)
    }
}

/// Golden-rule flip-flop between (0, +½, m_I) and (−1, −½, m_I).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlipFlop {
    pub m_i: Option<i8>,
    /// |⟨0,+½|H_dip|−1,−½⟩|, MHz.
    pub coupling: f64,
    /// E(0,+½) − E(−1,−½) from secular energies, MHz.
    pub detuning: f64,
    /// 1/μs.
    pub rate: f64,
}

/// 2π b² γ / (γ² + Δ²), all frequencies in MHz, result in 1/μs.
pub fn golden_rule_rate(coupling: f64, width: f64, detuning: f64) -> f64 {
    if coupling == 0.0 {
        return 0.0;
    }
    2.0 * PI * coupling * coupling * width / (width * width + detuning * detuning)
}

/// Flip-flop rate and detuning in one nuclear sector (`None` without a nucleus).
pub fn flipflop_rate(
    h: &CompositeHamiltonian,
    width: f64,
    m_i: Option<i8>,
) -> Result<FlipFlop, DynamicsError> {
    if h.geometry.is_none() {
        return Err(DynamicsError::MissingGeometry);
    }
    let upper = JointState {
        m_nv: 0,
        two_m_n: 1,
        m_i,
    };
    let lower = JointState {
        m_nv: -1,
        two_m_n: -1,
        m_i,
    };
    let coupling = h.dipolar_element(&upper, &lower)?;
    let detuning = h.secular_energy(&upper)? - h.secular_energy(&lower)?;
    Ok(FlipFlop {
        m_i,
        coupling,
        detuning,
        rate: golden_rule_rate(coupling, width, detuning),
    })
}

/// ESR line (0, m_N, m_I) ↔ (−1, m_N, m_I) frequency from secular energies, MHz.
pub fn esr_line_frequency(
    h: &CompositeHamiltonian,
    two_m_n: i8,
    m_i: Option<i8>,
) -> Result<f64, DynamicsError> {
    let zero = JointState {
        m_nv: 0,
        two_m_n,
        m_i,
    };
    let minus = JointState {
        m_nv: -1,
        two_m_n,
        m_i,
    };
    Ok((h.secular_energy(&minus)? - h.secular_energy(&zero)?).abs())
}

/// Generator of the population master equation, dp/dt = M p (1/μs).
#[derive(Clone, Debug, PartialEq)]
pub struct RateMatrix {
    pub generator: DMatrix<f64>,
    pub space: StateSpace,
}

impl RateMatrix {
    pub fn dim(&self) -> usize {
        self.generator.nrows()
    }

    /// Largest |column sum|; zero up to round-off for a valid generator.
    pub fn max_column_sum(&self) -> f64 {
        self.generator
            .column_iter()
            .map(|c| c.sum().abs())
            .fold(0.0, f64::max)
    }

    pub fn max_rate(&self) -> f64 {
        self.generator
            .diagonal()
            .iter()
            .map(|d| d.abs())
            .fold(0.0, f64::max)
    }

    fn add(&mut self, from: usize, to: usize, rate: f64) {
        if rate > 0.0 && from != to {
            self.generator[(to, from)] += rate;
            self.generator[(from, from)] -= rate;
        }
    }
}

/// Assembles every incoherent channel into a generator.
///
/// Channels: optical pumping (−1 → 0), dipolar flip-flop, symmetric N
/// relaxation, optional ESR drive at `esr_freq`, hyperfine flip-flop and
/// symmetric nuclear relaxation.
pub fn build_rate_matrix(
    space: &StateSpace,
    rates: &RateParams,
    h: &CompositeHamiltonian,
    esr_freq: Option<f64>,
) -> Result<RateMatrix, DynamicsError> {
    rates.validate()?;
    if space.include_nucleus() != h.params.include_nucleus {
        return Err(DynamicsError::InconsistentNucleus {
            space: space.include_nucleus(),
            hamiltonian: h.params.include_nucleus,
        });
    }
    let n = space.len();
    let mut m = RateMatrix {
        generator: DMatrix::zeros(n, n),
        space: space.clone(),
    };
    let width = rates.flipflop_width();
    let relax_n = if rates.t1_n.is_finite() {
        0.5 / rates.t1_n
    } else {
        0.0
    };
    let relax_nuc = if rates.t1_nuc.is_finite() {
        0.5 / rates.t1_nuc
    } else {
        0.0
    };

    for mi in space.nuclear_projections() {
        for two_mn in [1i8, -1] {
            let (z, d) = (space.state(0, two_mn, mi), space.state(-1, two_mn, mi));
            m.add(d, z, rates.gamma_pol);

            if let Some(f) = esr_freq {
                let line = esr_line_frequency(h, two_mn, mi)?;
                let rate = rates.esr_rate * lorentzian(f - line, rates.esr_linewidth);
                m.add(z, d, rate);
                m.add(d, z, rate);
            }
        }

        if h.geometry.is_some() {
            let ff = flipflop_rate(h, width, mi)?;
            let (a, b) = (space.state(0, 1, mi), space.state(-1, -1, mi));
            m.add(a, b, ff.rate);
            m.add(b, a, ff.rate);
        }

        for m_nv in [0i8, -1] {
            let (up, down) = (space.state(m_nv, 1, mi), space.state(m_nv, -1, mi));
            m.add(up, down, relax_n);
            m.add(down, up, relax_n);

            if let Some(mi) = mi {
                for two_mn in [1i8, -1] {
                    if mi > -1 {
                        let from = space.state(m_nv, two_mn, Some(mi));
                        let to = space.state(m_nv, two_mn, Some(mi - 1));
                        m.add(from, to, relax_nuc);
                        m.add(to, from, relax_nuc);
                    }
                }
                if mi > -1 {
                    let from = space.state(m_nv, -1, Some(mi));
                    let to = space.state(m_nv, 1, Some(mi - 1));
                    m.add(from, to, rates.w_hf);
                }
            }
        }
    }
    Ok(m)
}

/// Unit-height Lorentzian w² / (w² + δ²); a delta spike when w = 0.
pub fn lorentzian(delta: f64, width: f64) -> f64 {
    if width == 0.0 {
        return if delta == 0.0 { 1.0 } else { 0.0 };
    }
    width * width / (width * width + delta * delta)
}

/// Probabilities indexed like the state space labels.
#[derive(Clone, Debug, PartialEq)]
pub struct PopulationState {
    pub p: Vec<f64>,
}

impl PopulationState {
    pub fn new(p: Vec<f64>) -> Result<Self, DynamicsError> {
        let s = Self { p };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if let Some(x) = self.p.iter().find(|x| !(-1e-9..=1.0 + 1e-9).contains(*x)) {
            return Err(DynamicsError::InvalidPopulation(format!("entry {x} outside [0, 1]")));
        }
        let sum = self.total();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DynamicsError::InvalidPopulation(format!("sum {sum} != 1")));
        }
        Ok(())
    }

    pub fn total(&self) -> f64 {
        self.p.iter().sum()
    }

    /// NV in m = 0, N-electron and nucleus unpolarized.
    pub fn nv_polarized(space: &StateSpace) -> Self {
        let zeros: Vec<usize> = (0..space.len())
            .filter(|&i| space.labels()[i].m_nv == 0)
            .collect();
        let mut p = vec![0.0; space.len()];
        for &i in &zeros {
            p[i] = 1.0 / zeros.len() as f64;
        }
        Self { p }
    }

    fn check_dim(&self, n: usize) -> Result<(), DynamicsError> {
        if self.p.len() != n {
            return Err(DynamicsError::DimensionMismatch {
                expected: n,
                found: self.p.len(),
            });
        }
        Ok(())
    }

    fn sum_where(&self, space: &StateSpace, pred: impl Fn(&JointState) -> bool) -> f64 {
        space
            .labels()
            .iter()
            .zip(&self.p)
            .filter(|(l, _)| pred(l))
            .map(|(_, p)| p)
            .sum()
    }

    /// N-electron polarization p(−½) − p(+½).
    pub fn n_polarization(&self, space: &StateSpace) -> f64 {
        self.sum_where(space, |l| l.two_m_n < 0) - self.sum_where(space, |l| l.two_m_n > 0)
    }

    pub fn nv_zero_population(&self, space: &StateSpace) -> f64 {
        self.sum_where(space, |l| l.m_nv == 0)
    }

    /// Population of nuclear projection `m_i` (zero without a nucleus).
    pub fn nuclear_population(&self, space: &StateSpace, m_i: i8) -> f64 {
        self.sum_where(space, |l| l.m_i == Some(m_i))
    }
}

/// Number of closed communicating classes of the rate graph.
fn closed_classes(m: &DMatrix<f64>) -> usize {
    let n = m.nrows();
    let mut reach = vec![vec![false; n]; n];
    for i in 0..n {
        reach[i][i] = true;
        for j in 0..n {
            if i != j && m[(j, i)] > 0.0 {
                reach[i][j] = true;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                let row = reach[k].clone();
                for (dst, src) in reach[i].iter_mut().zip(row) {
                    *dst |= src;
                }
            }
        }
    }
    let mut seen = vec![false; n];
    let mut count = 0;
    for i in 0..n {
        if seen[i] {
            continue;
        }
        let closed = (0..n).all(|j| !reach[i][j] || reach[j][i]);
        if closed {
            count += 1;
            for j in 0..n {
                if reach[i][j] {
                    seen[j] = true;
                }
            }
        }
    }
    count
}

/// Solves M x = rhs subject to Σx = total, assuming a unique closed class.
fn solve_with_sum(m: &DMatrix<f64>, rhs: &DVector<f64>, total: f64) -> Result<DVector<f64>, DynamicsError> {
    let n = m.nrows();
    let mut a = m.clone();
    let mut b = rhs.clone();
    // Rows of a generator sum to the zero row, so any one row is redundant.
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    b[n - 1] = total;
    a.full_piv_lu().solve(&b).ok_or(DynamicsError::Singular)
}

/// Stationary distribution of the generator.
pub fn steady_state(m: &RateMatrix) -> Result<PopulationState, DynamicsError> {
    let classes = closed_classes(&m.generator);
    if classes != 1 {
        return Err(DynamicsError::Disconnected(classes));
    }
    let n = m.dim();
    let p = solve_with_sum(&m.generator, &DVector::zeros(n), 1.0)?;
    Ok(PopulationState {
        p: p.iter().copied().collect(),
    })
}

/// exp(M t) for a generator, by scaling and squaring a Taylor series.
///
/// Every column of the exact result sums to one; the squaring phase
/// re-imposes that after each product.
pub fn propagator(m: &RateMatrix, t: f64) -> Result<DMatrix<f64>, DynamicsError> {
    if t < 0.0 {
        return Err(DynamicsError::NegativeTime(t));
    }
    let n = m.dim();
    let a = &m.generator * t;
    let norm = a
        .column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if norm == 0.0 {
        return Ok(DMatrix::identity(n, n));
    }
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = &a / 2f64.powi(squarings);

    let mut result = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..40 {
        term = &term * &scaled / k as f64;
        result += &term;
        if term.amax() < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
        normalize_columns(&mut result);
    }
    Ok(result)
}

fn normalize_columns(e: &mut DMatrix<f64>) {
    for mut col in e.column_iter_mut() {
        let s = col.sum();
        if s > 0.0 {
            col /= s;
        }
    }
}

/// Populations after time `t`, p(t) = exp(M t) p0.
///
/// Falls back to fixed-step RK4 if the propagator misbehaves numerically.
pub fn evolve(m: &RateMatrix, p0: &PopulationState, t: f64) -> Result<PopulationState, DynamicsError> {
    p0.check_dim(m.dim())?;
    if t < 0.0 {
        return Err(DynamicsError::NegativeTime(t));
    }
    let e = propagator(m, t)?;
    let p = &e * DVector::from_column_slice(&p0.p);
    let sum: f64 = p.iter().sum();
    let ok = p.iter().all(|x| x.is_finite()) && (sum - p0.total()).abs() <= 1e-10;
    if ok {
        return Ok(PopulationState {
            p: p.iter().copied().collect(),
        });
    }
    evolve_rk4(m, p0, t)
}

/// Fixed-step RK4 with step ≤ 0.1 / max|rate|.
pub fn evolve_rk4(m: &RateMatrix, p0: &PopulationState, t: f64) -> Result<PopulationState, DynamicsError> {
    p0.check_dim(m.dim())?;
    let max_rate = m.max_rate();
    if t == 0.0 || max_rate == 0.0 {
        return Ok(p0.clone());
    }
    let steps = (t * max_rate / 0.1).ceil() as usize;
    if steps > RK4_MAX_STEPS {
        return Err(DynamicsError::StepUnderflow { steps, t });
    }
    let h = t / steps as f64;
    let g = &m.generator;
    let mut p = DVector::from_column_slice(&p0.p);
    for _ in 0..steps {
        let k1 = g * &p;
        let k2 = g * (&p + &k1 * (h / 2.0));
        let k3 = g * (&p + &k2 * (h / 2.0));
        let k4 = g * (&p + &k3 * h);
        p += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    Ok(PopulationState {
        p: p.iter().copied().collect(),
    })
}

/// Exact time average of the populations over [0, t], with the end state.
pub fn evolve_averaged(
    m: &RateMatrix,
    p0: &PopulationState,
    t: f64,
) -> Result<(PopulationState, PopulationState), DynamicsError> {
    let end = evolve(m, p0, t)?;
    if t == 0.0 {
        return Ok((p0.clone(), end));
    }
    let ss = steady_state(m)?;
    // ∫ p ds = t·p_ss + x, where M x = p(t) − p0 and Σx = 0.
    let rhs = DVector::from_iterator(m.dim(), end.p.iter().zip(&p0.p).map(|(a, b)| a - b));
    let x = solve_with_sum(&m.generator, &rhs, 0.0)?;
    let avg = ss.p.iter().zip(x.iter()).map(|(s, xi)| s + xi / t).collect();
    Ok((PopulationState { p: avg }, end))
}

/// Photoluminescence rate pl_rate · [p(0) + (1 − contrast) p(−1)], counts/μs.
pub fn pl_signal(p: &PopulationState, space: &StateSpace, rates: &RateParams) -> f64 {
    let p0 = p.nv_zero_population(space);
    let pm = p.total() - p0;
    rates.pl_rate * (p0 + (1.0 - rates.pl_contrast) * pm)
}

/// Drop in steady-state PL caused by an ESR drive at `f` (MHz).
pub fn esr_response(h: &CompositeHamiltonian, rates: &RateParams, f: f64) -> Result<f64, DynamicsError> {
    let space = StateSpace::for_hamiltonian(h);
    let off = steady_state(&build_rate_matrix(&space, rates, h, None)?)?;
    let on = steady_state(&build_rate_matrix(&space, rates, h, Some(f))?)?;
    Ok(pl_signal(&off, &space, rates) - pl_signal(&on, &space, rates))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{build_total, DipoleGeometry, PhysicalConstants, SystemParams};
    use proptest::prelude::*;

    fn ham(b: f64, geometry: Option<DipoleGeometry>, nucleus: bool) -> CompositeHamiltonian {
        let p = SystemParams {
            b,
            include_nucleus: nucleus,
            ..SystemParams::default()
        };
        build_total(&p, geometry.as_ref(), &PhysicalConstants::default()).unwrap()
    }

    fn quiet() -> RateParams {
        RateParams {
            gamma_pol: 0.0,
            gamma2: 0.0,
            t1_n: 1.0,
            esr_rate: 0.0,
            esr_linewidth: 1.0,
            w_hf: 0.0,
            t1_nuc: f64::INFINITY,
            pl_rate: 50.0,
            pl_contrast: 0.3,
        }
    }

    #[test]
    fn flipflop_line_shape() {
        let coupling = 0.7;
        let width = 2.0;
        let peak = golden_rule_rate(coupling, width, 0.0);
        assert!((peak - 2.0 * PI * coupling * coupling / width).abs() < 1e-12);
        assert!((golden_rule_rate(coupling, width, width) - 0.5 * peak).abs() < 1e-12);
        assert!((golden_rule_rate(coupling, width, -width) - 0.5 * peak).abs() < 1e-12);
    }

    #[test]
    fn flipflop_reads_matrix_element_and_secular_detuning() {
        let g = DipoleGeometry::new(2.3, 90.0, 0.0);
        let h = ham(600.0, Some(g), false);
        let ff = flipflop_rate(&h, 1.0, None).unwrap();
        let d0 = crate::hamiltonian::dipolar_prefactor(2.3, &h.params, &h.constants).unwrap();
        assert!((ff.coupling - 0.75 * 2f64.sqrt() * d0).abs() < 1e-12);
        let nu = 2.0 * 1.399_624_49 * 600.0;
        let expected = 2.0 * nu - 2880.0 - d0 / 2.0;
        assert!((ff.detuning - expected).abs() < 1e-9, "{} vs {expected}", ff.detuning);

        let g0 = DipoleGeometry::new(2.3, 0.0, 0.0);
        let ff0 = flipflop_rate(&ham(600.0, Some(g0), false), 1.0, None).unwrap();
        assert_eq!(ff0.coupling, 0.0);
        assert_eq!(ff0.rate, 0.0);
        assert!(matches!(
            flipflop_rate(&ham(600.0, None, false), 1.0, None),
            Err(DynamicsError::MissingGeometry)
        ));
    }

    #[test]
    fn all_zero_rates_give_zero_generator() {
        let h = ham(100.0, None, false);
        let mut r = quiet();
        r.t1_n = f64::INFINITY;
        let m = build_rate_matrix(&StateSpace::new(false), &r, &h, None).unwrap();
        assert!(m.generator.amax() < 1e-300);
        assert!(matches!(steady_state(&m), Err(DynamicsError::Disconnected(4))));
    }

    #[test]
    fn nucleus_flags_must_agree() {
        let h = ham(100.0, None, false);
        assert!(matches!(
            build_rate_matrix(&StateSpace::new(true), &quiet(), &h, None),
            Err(DynamicsError::InconsistentNucleus { .. })
        ));
    }

    #[test]
    fn relaxation_only_steady_state_is_uniform_in_m_n() {
        let h = ham(100.0, None, false);
        let space = StateSpace::new(false);
        let mut r = quiet();
        r.gamma_pol = 1.0;
        let m = build_rate_matrix(&space, &r, &h, None).unwrap();
        let ss = steady_state(&m).unwrap();
        assert!(ss.n_polarization(&space).abs() < 1e-12);
    }

    #[test]
    fn pumping_only_empties_minus_one() {
        let h = ham(100.0, None, false);
        let space = StateSpace::new(false);
        let mut r = quiet();
        r.gamma_pol = 5.0;
        let m = build_rate_matrix(&space, &r, &h, None).unwrap();
        let ss = steady_state(&m).unwrap();
        assert!((ss.nv_zero_population(&space) - 1.0).abs() < 1e-12);
        assert!(m.max_column_sum() < 1e-12);
    }

    /// Four-state chain with fast pumping: p(0,+½) (r + W) = r p(0,−½),
    /// so P = W / (2r + W) in the limit Γ_pol → ∞.
    fn four_state_polarization(w: f64, r: f64, gamma_pol: f64) -> f64 {
        // Exact steady state by brute-force linear solve of the 4×4 balance.
        // states: a=(0,+), b=(0,-), c=(-1,+), d=(-1,-)
        let mut m = DMatrix::<f64>::zeros(4, 4);
        let mut add = |from: usize, to: usize, k: f64| {
            m[(to, from)] += k;
            m[(from, from)] -= k;
        };
        add(2, 0, gamma_pol);
        add(3, 1, gamma_pol);
        add(0, 3, w);
        add(3, 0, w);
        for (x, y) in [(0, 1), (2, 3)] {
            add(x, y, r);
            add(y, x, r);
        }
        let mut a = m.clone();
        for j in 0..4 {
            a[(3, j)] = 1.0;
        }
        let mut b = DVector::zeros(4);
        b[3] = 1.0;
        let p = a.lu().solve(&b).unwrap();
        (p[1] + p[3]) - (p[0] + p[2])
    }

    #[test]
    fn strong_pumping_at_resonance_polarizes_n() {
        let space = StateSpace::new(false);
        let g = DipoleGeometry::new(3.0, 54.7356, 0.0);
        let b_res = 2880.0 / (4.0 * 1.399_624_49);
        let h = ham(b_res, Some(g), false);
        let mut r = quiet();
        r.t1_n = 1000.0;
        r.gamma_pol = 1e3;
        r.gamma2 = 0.1;
        let ff = flipflop_rate(&h, r.flipflop_width(), None).unwrap();
        let relax = 0.5 / r.t1_n;
        assert!(ff.rate > 100.0 * relax, "flip-flop {}", ff.rate);
        let ss = steady_state(&build_rate_matrix(&space, &r, &h, None).unwrap()).unwrap();
        let p = ss.n_polarization(&space);
        let oracle = four_state_polarization(ff.rate, relax, r.gamma_pol);
        assert!((p - oracle).abs() < 1e-9, "{p} vs {oracle}");
        assert!(p > 0.99, "{p}");
    }

    #[test]
    fn no_flipflop_means_no_polarization() {
        let space = StateSpace::new(false);
        let h = ham(514.0, Some(DipoleGeometry::new(2.0, 0.0, 0.0)), false);
        let mut r = quiet();
        r.gamma_pol = 100.0;
        let ss = steady_state(&build_rate_matrix(&space, &r, &h, None).unwrap()).unwrap();
        assert!(ss.n_polarization(&space).abs() < 1e-14);
    }

    #[test]
    fn evolve_zero_time_is_identity() {
        let h = ham(600.0, Some(DipoleGeometry::new(2.3, 90.0, 0.0)), false);
        let space = StateSpace::new(false);
        let mut r = RateParams::default();
        r.gamma_pol = 300.0;
        let m = build_rate_matrix(&space, &r, &h, None).unwrap();
        let p0 = PopulationState::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(evolve(&m, &p0, 0.0).unwrap(), p0);
        assert!(matches!(evolve(&m, &p0, -1.0), Err(DynamicsError::NegativeTime(_))));
    }

    #[test]
    fn dark_relaxation_is_single_exponential() {
        let h = ham(600.0, None, false);
        let space = StateSpace::new(false);
        let r = RateParams {
            t1_n: 75.0,
            ..quiet()
        };
        let m = build_rate_matrix(&space, &r, &h, None).unwrap();
        let p0 = PopulationState::new(vec![0.1, 0.7, 0.05, 0.15]).unwrap();
        let pol0 = p0.n_polarization(&space);
        for t in [1.0, 30.0, 75.0, 400.0] {
            let pt = evolve(&m, &p0, t).unwrap().n_polarization(&space);
            let expected = pol0 * (-t / 75.0f64).exp();
            assert!((pt - expected).abs() < 1e-12, "t={t}: {pt} vs {expected}");
        }
    }

    #[test]
    fn long_evolution_reaches_steady_state() {
        let h = ham(600.0, Some(DipoleGeometry::new(2.3, 90.0, 0.0)), false);
        let space = StateSpace::new(false);
        let mut r = RateParams::default();
        r.gamma_pol = 400.0;
        let m = build_rate_matrix(&space, &r, &h, Some(1200.0)).unwrap();
        let p0 = PopulationState::nv_polarized(&space);
        let late = evolve(&m, &p0, 5000.0).unwrap();
        let ss = steady_state(&m).unwrap();
        for (a, b) in late.p.iter().zip(&ss.p) {
            assert!((a - b).abs() < 1e-6);
        }
        let resid = &m.generator * DVector::from_column_slice(&ss.p);
        assert!(resid.amax() <= 1e-9);
    }

    #[test]
    fn rk4_agrees_with_propagator() {
        let h = ham(600.0, Some(DipoleGeometry::new(2.3, 90.0, 0.0)), false);
        let space = StateSpace::new(false);
        let mut r = RateParams::default();
        r.gamma_pol = 5.0;
        let m = build_rate_matrix(&space, &r, &h, Some(1201.0)).unwrap();
        let p0 = PopulationState::new(vec![0.25; 4]).unwrap();
        let a = evolve(&m, &p0, 3.0).unwrap();
        let b = evolve_rk4(&m, &p0, 3.0).unwrap();
        for (x, y) in a.p.iter().zip(&b.p) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn time_average_matches_quadrature() {
        let h = ham(600.0, Some(DipoleGeometry::new(2.3, 90.0, 0.0)), false);
        let space = StateSpace::new(false);
        let mut r = RateParams::default();
        r.gamma_pol = 2.0;
        let m = build_rate_matrix(&space, &r, &h, Some(1199.0)).unwrap();
        let p0 = PopulationState::new(vec![0.0, 0.0, 0.5, 0.5]).unwrap();
        let (avg, _) = evolve_averaged(&m, &p0, 5.0).unwrap();
        // composite Simpson on a fine grid
        let n = 2000;
        let h_step = 5.0 / n as f64;
        let mut acc = vec![0.0; 4];
        for k in 0..=n {
            let w = if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
            let p = evolve(&m, &p0, k as f64 * h_step).unwrap();
            for (a, x) in acc.iter_mut().zip(&p.p) {
                *a += w * x;
            }
        }
        for (a, b) in acc.iter().zip(&avg.p) {
            let simpson = a * h_step / 3.0 / 5.0;
            assert!((simpson - b).abs() < 1e-9, "{simpson} vs {b}");
        }
    }

    #[test]
    fn pl_signal_limits() {
        let space = StateSpace::new(false);
        let r = RateParams::default();
        let zero = PopulationState::new(vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        let minus = PopulationState::new(vec![0.0, 0.0, 0.5, 0.5]).unwrap();
        assert!((pl_signal(&zero, &space, &r) - r.pl_rate).abs() < 1e-12);
        assert!((pl_signal(&minus, &space, &r) - r.pl_rate * (1.0 - r.pl_contrast)).abs() < 1e-12);
        let flat = RateParams {
            pl_contrast: 0.0,
            ..r
        };
        assert_eq!(pl_signal(&zero, &space, &flat), pl_signal(&minus, &space, &flat));
    }

    #[test]
    fn esr_far_off_resonance_is_negligible() {
        let h = ham(100.0, Some(DipoleGeometry::new(2.3, 90.0, 0.0)), false);
        let mut r = RateParams::default();
        r.gamma_pol = 100.0;
        let line = esr_line_frequency(&h, 1, None).unwrap();
        let d = esr_response(&h, &r, line + 1000.0 * r.esr_linewidth).unwrap();
        assert!(d.abs() < 1e-6 * r.pl_rate, "{d}");
        let on = esr_response(&h, &r, line).unwrap();
        assert!(on > 0.0);
    }

    #[test]
    fn unpolarized_lines_have_equal_depth() {
        let h = ham(100.0, None, false);
        let mut r = RateParams::default();
        r.gamma_pol = 100.0;
        r.gamma2 = 0.0;
        let fp = esr_line_frequency(&h, 1, None).unwrap();
        let fm = esr_line_frequency(&h, -1, None).unwrap();
        let dp = esr_response(&h, &r, fp).unwrap();
        let dm = esr_response(&h, &r, fm).unwrap();
        assert!((dp - dm).abs() < 1e-6 * dp.max(dm), "{dp} vs {dm}");
    }

    #[test]
    fn polarized_n_suppresses_plus_half_line() {
        let b_res = 2880.0 / (4.0 * 1.399_624_49);
        let h = ham(b_res, Some(DipoleGeometry::new(2.3, 90.0, 0.0)), false);
        let mut r = RateParams::default();
        r.gamma_pol = 100.0;
        let space = StateSpace::new(false);
        let pol = steady_state(&build_rate_matrix(&space, &r, &h, None).unwrap())
            .unwrap()
            .n_polarization(&space);
        assert!(pol > 0.99, "{pol}");
        let fp = esr_line_frequency(&h, 1, None).unwrap();
        let fm = esr_line_frequency(&h, -1, None).unwrap();
        let dp = esr_response(&h, &r, fp).unwrap();
        let dm = esr_response(&h, &r, fm).unwrap();
        // residual dip is the Lorentzian tail of the −½ line 4.3 MHz away
        assert!(dp < 0.15 * dm, "{dp} vs {dm}");
    }

    #[test]
    fn polarization_grows_with_pumping() {
        let h = ham(600.0, Some(DipoleGeometry::new(2.3, 90.0, 0.0)), false);
        let space = StateSpace::new(false);
        let mut last = -1.0;
        for k in 0..12 {
            let gp = 0.1 * 10f64.powf(k as f64 * 4.0 / 11.0);
            let r = RateParams {
                gamma_pol: gp,
                ..RateParams::default()
            };
            let p = steady_state(&build_rate_matrix(&space, &r, &h, None).unwrap())
                .unwrap()
                .n_polarization(&space);
            assert!(p >= last - 1e-12, "gamma_pol {gp}: {p} < {last}");
            last = p;
        }
    }

    #[test]
    fn flipflop_peaks_at_matching_field_and_is_symmetric() {
        let g = DipoleGeometry::new(2.3, 54.7356103172, 0.0);
        let consts = PhysicalConstants::default();
        let b_res = crate::hamiltonian::find_resonance_field(
            &SystemParams::default(),
            &consts,
            &crate::hamiltonian::ResonanceCondition::new(0),
        )
        .unwrap();
        let width = 0.5;
        let rate = |b: f64| flipflop_rate(&ham(b, Some(g), false), width, None).unwrap();
        let peak = rate(b_res);
        let slope = 4.0 * 1.399_624_49; // dΔ/dB
        for k in 1..=20 {
            let db = k as f64 * 0.5 * width / slope;
            let (lo, hi) = (rate(b_res - db), rate(b_res + db));
            assert!(lo.rate < peak.rate && hi.rate < peak.rate);
            assert!((lo.rate - hi.rate).abs() <= 0.01 * hi.rate);
        }
    }

    #[test]
    fn nuclear_channels_connect_sectors() {
        let h = ham(514.0, Some(DipoleGeometry::new(4.0, 54.7356, 0.0)), true);
        let space = StateSpace::new(true);
        assert_eq!(space.len(), 12);
        let r = RateParams {
            gamma_pol: 50.0,
            w_hf: 0.01,
            ..RateParams::default()
        };
        let ss = steady_state(&build_rate_matrix(&space, &r, &h, None).unwrap()).unwrap();
        let up = ss.nuclear_population(&space, 1);
        let down = ss.nuclear_population(&space, -1);
        assert!(down > up, "{down} vs {up}");

        let isolated = RateParams {
            t1_nuc: f64::INFINITY,
            w_hf: 0.0,
            ..r
        };
        let m = build_rate_matrix(&space, &isolated, &h, None).unwrap();
        assert!(matches!(steady_state(&m), Err(DynamicsError::Disconnected(3))));
    }

    fn random_rates(seed: u64, nucleus: bool) -> (RateMatrix, PopulationState) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let b = rng.random_range(0.0..1000.0);
        let geom = DipoleGeometry::new(rng.random_range(1.0..6.0), rng.random_range(0.0..180.0), 0.0);
        let h = ham(b, Some(geom), nucleus);
        let r = RateParams {
            gamma_pol: 10f64.powf(rng.random_range(-3.0..3.0)),
            gamma2: rng.random_range(0.0..5.0),
            t1_n: 10f64.powf(rng.random_range(0.0..3.0)),
            esr_rate: rng.random_range(0.0..50.0),
            esr_linewidth: rng.random_range(0.1..5.0),
            w_hf: rng.random_range(0.0..0.1),
            t1_nuc: 10f64.powf(rng.random_range(2.0..5.0)),
            pl_rate: 50.0,
            pl_contrast: 0.3,
        };
        let space = StateSpace::new(nucleus);
        let f = esr_line_frequency(&h, 1, space.nuclear_projections()[0]).unwrap() + rng.random_range(-3.0..3.0);
        let m = build_rate_matrix(&space, &r, &h, Some(f)).unwrap();
        let mut p: Vec<f64> = (0..space.len()).map(|_| rng.random_range(0.0..1.0)).collect();
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= s);
        (m, PopulationState { p })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn generators_conserve_probability(seed in 0u64..10_000, nucleus in any::<bool>()) {
            let (m, p0) = random_rates(seed, nucleus);
            prop_assert!(m.max_column_sum() <= 1e-12 * m.max_rate().max(1.0));
            for i in 0..m.dim() {
                for j in 0..m.dim() {
                    if i != j {
                        prop_assert!(m.generator[(i, j)] >= 0.0);
                    }
                }
            }
            for t in [0.1, 10.0, 1000.0] {
                let p = evolve(&m, &p0, t).unwrap();
                prop_assert!(p.validate().is_ok(), "{:?}", p);
            }
        }

        #[test]
        fn evolution_is_a_semigroup(seed in 0u64..10_000, t1 in 0.0f64..50.0, t2 in 0.0f64..50.0) {
            let (m, p0) = random_rates(seed, false);
            let direct = evolve(&m, &p0, t1 + t2).unwrap();
            let split = evolve(&m, &evolve(&m, &p0, t1).unwrap(), t2).unwrap();
            for (a, b) in direct.p.iter().zip(&split.p) {
                prop_assert!((a - b).abs() < 1e-8);
            }
        }
    }
}
