//! Measurement drivers: cw field sweeps, ESR spectra and maps, laser-power
//! series and the pump–probe relaxation sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use thiserror::Error;

use crate::dynamics::{
    build_rate_matrix, esr_line_frequency, evolve, evolve_averaged, pl_signal, steady_state,
    DynamicsError, PopulationState, RateMatrix, RateParams, StateSpace,
};
use crate::fitting::{fit_double_lorentzian, fit_exp_decay, polarization_from_amplitudes, FitError, FitResult};
use crate::hamiltonian::{
    build_total, CompositeHamiltonian, DipoleGeometry, HamiltonianError, PhysicalConstants,
    SystemParams,
};
use crate::sweep::{check_strictly_monotone, Series, SweepError, SweepResult};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error(transparent)]
    Hamiltonian(#[from] HamiltonianError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("fit failed: {0}")]
    Fit(#[from] FitError),
    #[error(transparent)]
    Grid(#[from] SweepError),
    #[error("{key}: {message}")]
    InvalidSpec { key: &'static str, message: String },
}

type Result<T> = std::result::Result<T, ExperimentError>;

/// ESR responses below this fraction of `pl_rate` are treated as absent.
const NO_SIGNAL: f64 = 1e-9;

/// Optical pumping rate per μW that puts the fitted polarization at 0.70
/// for 550 μW and 600 G with the default rates and geometry.
pub const DEFAULT_K_POL: f64 = 1.337;

/// Everything a measurement needs apart from its own grids.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Model {
    pub params: SystemParams,
    pub geometry: Option<DipoleGeometry>,
    pub constants: PhysicalConstants,
    /// `gamma_pol` is ignored; it is set from the laser power.
    pub rates: RateParams,
    /// Optical pumping rate per unit laser power, 1/(μs·μW).
    pub k_pol: f64,
}

impl Model {
    pub fn hamiltonian(&self, b: f64) -> Result<CompositeHamiltonian> {
        Ok(build_total(&self.params.with_field(b), self.geometry.as_ref(), &self.constants)?)
    }

    pub fn rates_at(&self, power: f64) -> RateParams {
        RateParams {
            gamma_pol: self.k_pol * power,
            ..self.rates
        }
    }

    pub fn space(&self) -> StateSpace {
        StateSpace::new(self.params.include_nucleus)
    }

    /// Doublet center D − g μ_B B, MHz.
    pub fn center_frequency(&self, b: f64) -> f64 {
        self.params.d - self.params.g_nv * self.constants.bohr_mhz_per_gauss * b
    }

    pub fn with_nucleus(mut self, on: bool) -> Self {
        self.params.include_nucleus = on;
        self
    }

    /// Population-weighted ESR line of each m_N, MHz: (m_N = −½, m_N = +½).
    pub fn line_frequencies(&self, b: f64) -> Result<(f64, f64)> {
        let h = self.hamiltonian(b)?;
        let mis: Vec<Option<i8>> = if self.params.include_nucleus {
            vec![Some(1), Some(0), Some(-1)]
        } else {
            vec![None]
        };
        let mut lines = [0.0; 2];
        for (k, two_mn) in [-1i8, 1].into_iter().enumerate() {
            for &mi in &mis {
                lines[k] += esr_line_frequency(&h, two_mn, mi)? / mis.len() as f64;
            }
        }
        Ok((lines[0], lines[1]))
    }

    fn check_power(&self, power: f64) -> Result<()> {
        if !(power.is_finite() && power >= 0.0) {
            return Err(ExperimentError::InvalidSpec {
                key: "power",
                message: format!("laser power must be >= 0 μW, got {power}"),
            });
        }
        Ok(())
    }
}

/// Steady-state N polarization p(−½) − p(+½) without ESR drive.
pub fn steady_polarization(model: &Model, b: f64, power: f64) -> Result<f64> {
    let h = model.hamiltonian(b)?;
    let space = model.space();
    let m = build_rate_matrix(&space, &model.rates_at(power), &h, None)?;
    Ok(steady_state(&m)?.n_polarization(&space))
}

/// cw photoluminescence versus field, no ESR drive.
pub fn field_sweep(model: &Model, b_grid: &[f64], power: f64) -> Result<SweepResult> {
    model.check_power(power)?;
    check_strictly_monotone(b_grid)?;
    let rates = model.rates_at(power);
    let space = model.space();
    let pl: Vec<f64> = b_grid
        .par_iter()
        .map(|&b| {
            let h = model.hamiltonian(b)?;
            let p = steady_state(&build_rate_matrix(&space, &rates, &h, None)?)?;
            Ok(pl_signal(&p, &space, &rates))
        })
        .collect::<Result<_>>()?;
    Ok(SweepResult::new("B [G]", b_grid.to_vec(), "I_PL [counts/us]", pl)?.with_meta("power_uW", power))
}

/// ESR-induced PL change ΔI_PL(f) at fixed field.
pub fn esr_sweep(model: &Model, f_grid: &[f64], b: f64, power: f64) -> Result<SweepResult> {
    model.check_power(power)?;
    check_strictly_monotone(f_grid)?;
    let rates = model.rates_at(power);
    let space = model.space();
    let h = model.hamiltonian(b)?;
    let reference = pl_signal(&steady_state(&build_rate_matrix(&space, &rates, &h, None)?)?, &space, &rates);
    let di: Vec<f64> = f_grid
        .par_iter()
        .map(|&f| {
            let p = steady_state(&build_rate_matrix(&space, &rates, &h, Some(f))?)?;
            Ok(reference - pl_signal(&p, &space, &rates))
        })
        .collect::<Result<_>>()?;
    Ok(SweepResult::new("f [MHz]", f_grid.to_vec(), "dI_PL [counts/us]", di)?
        .with_meta("B_G", b)
        .with_meta("power_uW", power))
}

/// One ESR spectrum per field, each on the offset axis f − (D − g μ_B B).
pub fn esr_field_map(model: &Model, f_offsets: &[f64], b_grid: &[f64], power: f64) -> Result<Vec<SweepResult>> {
    check_strictly_monotone(b_grid)?;
    check_strictly_monotone(f_offsets)?;
    b_grid
        .par_iter()
        .map(|&b| {
            let f0 = model.center_frequency(b);
            let f: Vec<f64> = f_offsets.iter().map(|o| f0 + o).collect();
            let mut s = esr_sweep(model, &f, b, power)?;
            s.x = f_offsets.to_vec();
            s.x_label = "f - f0 [MHz]".into();
            Ok(s.with_meta("f0_MHz", f0))
        })
        .collect()
}

/// Dip amplitudes and the amplitude-ratio polarization of one ESR spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct DoubletReadout {
    pub fit: FitResult,
    /// Amplitude of the m_N = −½ dip.
    pub a_minus: f64,
    /// Amplitude of the m_N = +½ dip.
    pub a_plus: f64,
    /// Amplitude of the lower- and higher-frequency dips.
    pub a_low: f64,
    pub a_high: f64,
    pub polarization: f64,
    pub unreliable: bool,
}

/// Fits a double Lorentzian to the PL dips −ΔI(f) and assigns each dip to
/// the nearer of the two predicted m_N lines.
pub fn read_doublet(x: &[f64], delta: &[f64], lines: (f64, f64)) -> Result<DoubletReadout> {
    let dips: Vec<f64> = delta.iter().map(|d| -d).collect();
    let fit = fit_double_lorentzian(x, &dips)?;
    let (a1, c1, a2, c2) = (fit.value("a1"), fit.value("c1"), fit.value("a2"), fit.value("c2"));
    let (minus, plus) = lines;
    let cost_direct = (c1 - minus).abs() + (c2 - plus).abs();
    let cost_swapped = (c1 - plus).abs() + (c2 - minus).abs();
    let (a_minus, a_plus) = if cost_direct <= cost_swapped { (a1, a2) } else { (a2, a1) };
    let polarization = polarization_from_amplitudes(a_minus, a_plus)?;
    Ok(DoubletReadout {
        unreliable: fit.unreliable,
        fit,
        a_minus,
        a_plus,
        a_low: a1,
        a_high: a2,
        polarization,
    })
}

/// Fitted and true N polarization versus laser power at fixed field.
///
/// Series: `P` from the double-Lorentzian amplitude readout of an ESR
/// spectrum, `P_steady` from the steady-state populations.
pub fn power_sweep(model: &Model, powers: &[f64], b: f64, f_offsets: &[f64]) -> Result<SweepResult> {
    check_strictly_monotone(powers)?;
    let f0 = model.center_frequency(b);
    let f: Vec<f64> = f_offsets.iter().map(|o| f0 + o).collect();
    let lines = model.line_frequencies(b)?;
    let rows: Vec<(f64, f64, bool)> = powers
        .par_iter()
        .map(|&power| {
            let truth = steady_polarization(model, b, power)?;
            let spectrum = esr_sweep(model, &f, b, power)?;
            let signal = spectrum.y().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if signal <= NO_SIGNAL * model.rates.pl_rate {
                return Ok((f64::NAN, truth, true));
            }
            match read_doublet(&spectrum.x, spectrum.y(), lines) {
                Ok(r) => Ok((r.polarization, truth, r.unreliable)),
                Err(ExperimentError::Fit(FitError::NoDynamicRange(_)))
                | Err(ExperimentError::Fit(FitError::ZeroAmplitudes)) => Ok((f64::NAN, truth, true)),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let unreliable: Vec<String> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.2)
        .map(|(i, _)| i.to_string())
        .collect();
    Ok(SweepResult::with_series(
        "power [uW]",
        powers.to_vec(),
        vec![
            Series {
                label: "P".into(),
                values: rows.iter().map(|r| r.0).collect(),
            },
            Series {
                label: "P_steady".into(),
                values: rows.iter().map(|r| r.1).collect(),
            },
        ],
    )?
    .with_meta("B_G", b)
    .with_meta("unreliable_points", format!("[{}]", unreliable.join(" "))))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Readout {
    /// Mean PL over the probe window.
    Average,
    /// PL at the end of the probe window.
    Instant,
}

/// Pump–probe timing. Durations in μs.
#[derive(Clone, Debug, PartialEq)]
pub struct PumpProbeSpec {
    pub pump_duration: f64,
    pub probe_duration: f64,
    pub wait_times: Vec<f64>,
    /// Constant cycle length; `None` means pump + probe + max(wait).
    pub cycle_period: Option<f64>,
    pub power: f64,
    pub b: f64,
    pub readout: Readout,
}

impl Default for PumpProbeSpec {
    fn default() -> Self {
        Self {
            pump_duration: 100.0,
            probe_duration: 5.0,
            wait_times: vec![1.0, 10.0, 20.0, 35.0, 50.0, 75.0, 100.0, 140.0, 180.0, 240.0, 300.0, 400.0],
            cycle_period: None,
            power: 550.0,
            b: 600.0,
            readout: Readout::Average,
        }
    }
}

impl PumpProbeSpec {
    pub fn max_wait(&self) -> f64 {
        self.wait_times.iter().cloned().fold(0.0, f64::max)
    }

    pub fn cycle(&self) -> f64 {
        self.cycle_period
            .unwrap_or(self.pump_duration + self.probe_duration + self.max_wait())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key, message: String| Err(ExperimentError::InvalidSpec { key, message });
        if !(self.pump_duration > 0.0 && self.pump_duration.is_finite()) {
            return bad("pump_probe.pump", format!("must be > 0 μs, got {}", self.pump_duration));
        }
        if !(self.probe_duration > 0.0 && self.probe_duration.is_finite()) {
            return bad("pump_probe.probe", format!("must be > 0 μs, got {}", self.probe_duration));
        }
        if self.wait_times.is_empty() {
            return bad("pump_probe.wait", "needs at least one wait time".into());
        }
        if let Some(w) = self.wait_times.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return bad("pump_probe.wait", format!("wait times must be > 0 μs, got {w}"));
        }
        check_strictly_monotone(&self.wait_times)?;
        let needed = self.pump_duration + self.probe_duration + self.max_wait();
        if self.cycle() < needed {
            return bad(
                "pump_probe.cycle",
                format!("must be >= pump + probe + max(wait) = {needed} μs, got {}", self.cycle()),
            );
        }
        if !(self.power.is_finite() && self.power > 0.0) {
            return bad("pump_probe.power", format!("must be > 0 μW, got {}", self.power));
        }
        Ok(())
    }
}

/// Poisson counting noise on the probe signals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShotNoise {
    /// Standard deviation of ΔI_PL relative to the largest noiseless dip.
    pub level: f64,
    pub seed: u64,
}

/// Noiseless probe signals: per wait time, the reference PL and the PL
/// with ESR at each frequency.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeSignals {
    pub frequencies: Vec<f64>,
    pub wait_times: Vec<f64>,
    pub reference: Vec<f64>,
    pub driven: Vec<Vec<f64>>,
}

impl ProbeSignals {
    pub fn delta(&self, k: usize) -> Vec<f64> {
        self.driven[k].iter().map(|s| self.reference[k] - s).collect()
    }

    fn max_delta(&self) -> f64 {
        (0..self.wait_times.len())
            .flat_map(|k| self.delta(k))
            .fold(0.0, f64::max)
    }

    /// Counting time per frequency point that gives ΔI noise `level · max ΔI`.
    fn counting_time(&self, level: f64) -> f64 {
        let mean_ref = self.reference.iter().sum::<f64>() / self.reference.len() as f64;
        2.0 * mean_ref / (level * self.max_delta()).powi(2)
    }

    /// ΔI_PL spectra with Poisson counts drawn for reference and signal.
    pub fn noisy_deltas(&self, noise: &ShotNoise) -> Vec<Vec<f64>> {
        let t = self.counting_time(noise.level);
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
        let mut draw = |rate: f64| -> f64 {
            let mean = rate * t;
            if mean <= 0.0 {
                return 0.0;
            }
            Poisson::new(mean).map(|d| d.sample(&mut rng)).unwrap_or(mean) / t
        };
        (0..self.wait_times.len())
            .map(|k| {
                let r = draw(self.reference[k]);
                self.driven[k].iter().map(|&s| r - draw(s)).collect()
            })
            .collect()
    }
}

fn probe_pl(m: &RateMatrix, p: &PopulationState, spec: &PumpProbeSpec, rates: &RateParams) -> Result<f64> {
    let space = &m.space;
    Ok(match spec.readout {
        Readout::Average => {
            let (avg, _) = evolve_averaged(m, p, spec.probe_duration)?;
            pl_signal(&avg, space, rates)
        }
        Readout::Instant => pl_signal(&evolve(m, p, spec.probe_duration)?, space, rates),
    })
}

/// Runs the pump → dark wait → probe sequence for every wait time and every
/// ESR frequency.
///
/// Each cycle starts with the NV in m = 0 and the N spin unpolarized.
pub fn probe_signals(model: &Model, spec: &PumpProbeSpec, f_offsets: &[f64]) -> Result<ProbeSignals> {
    spec.validate()?;
    check_strictly_monotone(f_offsets)?;
    let h = model.hamiltonian(spec.b)?;
    let space = model.space();
    let on = model.rates_at(spec.power);
    let dark = on.dark();
    let pump = build_rate_matrix(&space, &on, &h, None)?;
    let wait = build_rate_matrix(&space, &dark, &h, None)?;
    let f0 = model.center_frequency(spec.b);
    let frequencies: Vec<f64> = f_offsets.iter().map(|o| f0 + o).collect();
    let probes: Vec<RateMatrix> = frequencies
        .iter()
        .map(|&f| build_rate_matrix(&space, &on, &h, Some(f)))
        .collect::<std::result::Result<_, _>>()?;

    let pumped = evolve(&pump, &PopulationState::nv_polarized(&space), spec.pump_duration)?;
    let rows: Vec<(f64, Vec<f64>)> = spec
        .wait_times
        .par_iter()
        .map(|&w| {
            let start = evolve(&wait, &pumped, w)?;
            let reference = probe_pl(&pump, &start, spec, &on)?;
            let driven = probes
                .iter()
                .map(|m| probe_pl(m, &start, spec, &on))
                .collect::<Result<Vec<f64>>>()?;
            Ok((reference, driven))
        })
        .collect::<Result<_>>()?;
    let (reference, driven) = rows.into_iter().unzip();
    Ok(ProbeSignals {
        frequencies,
        wait_times: spec.wait_times.clone(),
        reference,
        driven,
    })
}

/// Polarization versus wait time with its single-exponential fit.
#[derive(Clone, Debug, PartialEq)]
pub struct PumpProbeResult {
    pub sweep: SweepResult,
    pub fit: FitResult,
}

impl PumpProbeResult {
    pub fn t1(&self) -> f64 {
        self.fit.value("t1")
    }
}

/// Amplitude-ratio polarization for each wait time from the given ΔI spectra.
pub fn polarization_series(frequencies: &[f64], deltas: &[Vec<f64>], lines: (f64, f64)) -> Result<Vec<f64>> {
    deltas
        .iter()
        .map(|d| Ok(read_doublet(frequencies, d, lines)?.polarization))
        .collect()
}

/// Full pump–probe measurement: P(wait) from ESR doublets in the probe
/// window, then a single-exponential fit for T1.
pub fn pump_probe(
    model: &Model,
    spec: &PumpProbeSpec,
    f_offsets: &[f64],
    noise: Option<ShotNoise>,
) -> Result<PumpProbeResult> {
    let signals = probe_signals(model, spec, f_offsets)?;
    pump_probe_from_signals(model, spec, &signals, noise)
}

pub fn pump_probe_from_signals(
    model: &Model,
    spec: &PumpProbeSpec,
    signals: &ProbeSignals,
    noise: Option<ShotNoise>,
) -> Result<PumpProbeResult> {
    let lines = model.line_frequencies(spec.b)?;
    let deltas = match &noise {
        Some(n) => signals.noisy_deltas(n),
        None => (0..signals.wait_times.len()).map(|k| signals.delta(k)).collect(),
    };
    let p = polarization_series(&signals.frequencies, &deltas, lines)?;
    let fit = fit_exp_decay(&signals.wait_times, &p)?;
    let mut sweep = SweepResult::new("wait [us]", signals.wait_times.clone(), "P", p)?
        .with_meta("B_G", spec.b)
        .with_meta("power_uW", spec.power)
        .with_meta("pump_us", spec.pump_duration)
        .with_meta("probe_us", spec.probe_duration)
        .with_meta("cycle_us", spec.cycle())
        .with_meta("T1_us", fit.value("t1"))
        .with_meta("T1_stderr_us", fit.stderr_of("t1").unwrap_or(f64::NAN));
    if let Some(n) = noise {
        sweep = sweep.with_meta("noise", n.level);
    }
    Ok(PumpProbeResult { sweep, fit })
}

/// Local minima of `y` deeper than `min_depth` below both neighbouring
/// maxima, refined by a parabola through the three lowest samples.
pub fn find_dips(x: &[f64], y: &[f64], min_depth: f64) -> Vec<f64> {
    let n = y.len();
    let mut out = Vec::new();
    if n < 3 {
        return out;
    }
    for i in 1..n - 1 {
        if !(y[i] < y[i - 1] && y[i] <= y[i + 1]) {
            continue;
        }
        let left = y[..i].iter().rev().scan(y[i], |_, &v| Some(v)).fold(y[i], f64::max);
        let right = y[i + 1..].iter().fold(y[i], |m, &v| m.max(v));
        // prominence against the lower of the two shoulders up to the next deeper dip
        let left_peak = shoulder(&y[..=i], true).unwrap_or(left);
        let right_peak = shoulder(&y[i..], false).unwrap_or(right);
        if left_peak.min(right_peak) - y[i] < min_depth {
            continue;
        }
        let (x0, x1, x2) = (x[i - 1], x[i], x[i + 1]);
        let (y0, y1, y2) = (y[i - 1], y[i], y[i + 1]);
        let denom = (x0 - x1) * (x0 - x2) * (x1 - x2);
        let a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / denom;
        let b = (x2 * x2 * (y0 - y1) + x1 * x1 * (y2 - y0) + x0 * x0 * (y1 - y2)) / denom;
        out.push(if a > 0.0 { -b / (2.0 * a) } else { x1 });
    }
    out
}

/// Highest value reached walking away from the minimum before dropping
/// below it again.
fn shoulder(segment: &[f64], leftwards: bool) -> Option<f64> {
    let it: Box<dyn Iterator<Item = &f64>> = if leftwards {
        Box::new(segment.iter().rev())
    } else {
        Box::new(segment.iter())
    };
    let mut it = it;
    let base = *it.next()?;
    let mut best = base;
    for &v in it {
        if v < base {
            break;
        }
        best = best.max(v);
    }
    Some(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{find_resonance_field, ResonanceCondition};
    use crate::sweep::{arange_inclusive, linspace};

    fn model() -> Model {
        Model {
            params: SystemParams::default(),
            geometry: Some(DipoleGeometry::new(2.3, 90.0, 0.0)),
            constants: PhysicalConstants::default(),
            rates: RateParams::default(),
            k_pol: DEFAULT_K_POL,
        }
    }

    #[test]
    fn find_dips_on_synthetic_trace() {
        let x = linspace(0.0, 10.0, 1001);
        let y: Vec<f64> = x
            .iter()
            .map(|&v| 5.0 - 1.0 / (1.0 + (v - 3.0).powi(2) / 0.04) - 0.5 / (1.0 + (v - 7.2).powi(2) / 0.04))
            .collect();
        let d = find_dips(&x, &y, 1e-3);
        assert_eq!(d.len(), 2);
        assert!((d[0] - 3.0).abs() < 1e-3 && (d[1] - 7.2).abs() < 1e-3, "{d:?}");
        assert!(find_dips(&x, &vec![1.0; 1001], 1e-9).is_empty());
    }

    #[test]
    fn doublet_center_at_100_gauss() {
        let m = model();
        assert!((m.center_frequency(100.0) - 2600.1).abs() < 0.05);
        let (minus, plus) = m.line_frequencies(100.0).unwrap();
        assert!(((minus + plus) / 2.0 - 2600.1).abs() < 0.05);
    }

    #[test]
    fn flat_field_sweep_without_coupling() {
        let m = Model {
            geometry: None,
            ..model()
        }
        .with_nucleus(true);
        let s = field_sweep(&m, &linspace(480.0, 550.0, 71), 100.0).unwrap();
        let (lo, hi) = s.y().iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        assert!(hi - lo < 1e-9 * m.rates.pl_rate);
    }

    fn weak_magic_model() -> Model {
        Model {
            geometry: Some(DipoleGeometry::new(6.0, 54.735_610_317_245_35, 0.0)),
            ..model()
        }
        .with_nucleus(true)
    }

    #[test]
    fn field_sweep_dips_at_resonance_fields() {
        let m = weak_magic_model();
        let grid = arange_inclusive(490.0, 540.0, 0.1);
        let s = field_sweep(&m, &grid, 20.0).unwrap();
        let dips = find_dips(&s.x, s.y(), 1e-6 * m.rates.pl_rate);
        assert_eq!(dips.len(), 3, "{dips:?}");
        for (dip, mi) in dips.iter().zip([1i8, 0, -1]) {
            let expected = find_resonance_field(&m.params, &m.constants, &ResonanceCondition::new(mi)).unwrap();
            assert!((dip - expected).abs() < 0.05, "m_I {mi}: {dip} vs {expected}");
        }
        for (dip, expected) in dips.iter().zip([499.1, 514.4, 529.8]) {
            assert!((dip - expected).abs() < 0.3);
        }
    }

    #[test]
    fn dip_positions_ignore_readout_scale() {
        let m = weak_magic_model();
        let grid = arange_inclusive(495.0, 535.0, 0.2);
        let a = field_sweep(&m, &grid, 20.0).unwrap();
        let mut m2 = m;
        m2.rates.pl_rate = 7.0;
        m2.rates.pl_contrast = 0.12;
        let b = field_sweep(&m2, &grid, 20.0).unwrap();
        let da = find_dips(&a.x, a.y(), 1e-9);
        let db = find_dips(&b.x, b.y(), 1e-9);
        assert_eq!(da.len(), db.len());
        for (p, q) in da.iter().zip(&db) {
            assert!((p - q).abs() < 1e-6);
        }
    }

    #[test]
    fn hyperfine_flipflop_makes_side_dips_unequal() {
        let mut m = weak_magic_model();
        m.rates.w_hf = 0.05;
        let grid = arange_inclusive(490.0, 540.0, 0.1);
        let s = field_sweep(&m, &grid, 20.0).unwrap();
        let baseline = m.rates.pl_rate;
        let depth_at = |b: f64| {
            let i = grid.iter().position(|&g| (g - b).abs() < 0.051).unwrap();
            let lo = i.saturating_sub(10);
            baseline - s.y()[lo..i + 10].iter().cloned().fold(f64::MAX, f64::min)
        };
        let (plus, minus) = (depth_at(499.06), depth_at(529.79));
        assert!(minus > 1.2 * plus, "m_I=-1 dip {minus} vs m_I=+1 dip {plus}");
    }

    #[test]
    fn doublet_splitting_matches_secular_value() {
        let m = Model {
            geometry: Some(DipoleGeometry::new(4.0, 90.0, 0.0)),
            ..model()
        };
        let d0 = crate::hamiltonian::dipolar_prefactor(4.0, &m.params, &m.constants).unwrap();
        let f0 = m.center_frequency(100.0);
        let f: Vec<f64> = linspace(f0 - 6.0, f0 + 6.0, 241);
        let mut m2 = m;
        m2.rates.esr_linewidth = 0.2;
        let s = esr_sweep(&m2, &f, 100.0, 50.0).unwrap();
        let r = read_doublet(&s.x, s.y(), m2.line_frequencies(100.0).unwrap()).unwrap();
        let split = r.fit.value("c2") - r.fit.value("c1");
        assert!((split - d0).abs() < 0.01 * d0, "{split} vs {d0}");
    }

    #[test]
    fn strong_pumping_at_600_gauss_suppresses_plus_dip() {
        let m = model();
        let f0 = m.center_frequency(600.0);
        let f = linspace(f0 - 12.0, f0 + 12.0, 97);
        let s = esr_sweep(&m, &f, 600.0, 2000.0).unwrap();
        let r = read_doublet(&s.x, s.y(), m.line_frequencies(600.0).unwrap()).unwrap();
        assert!(r.a_plus < 0.2 * r.a_minus, "{r:?}");
    }

    #[test]
    fn asymmetry_sign_flips_across_magic_angle() {
        let asym = |theta: f64| {
            let m = Model {
                geometry: Some(DipoleGeometry::new(2.3, theta, 0.0)),
                ..model()
            };
            let b = 514.0;
            let f0 = m.center_frequency(b);
            let f = linspace(f0 - 15.0, f0 + 15.0, 121);
            let s = esr_sweep(&m, &f, b, 100.0).unwrap();
            let r = read_doublet(&s.x, s.y(), m.line_frequencies(b).unwrap()).unwrap();
            (r.a_low - r.a_high) / (r.a_low + r.a_high)
        };
        assert!(asym(90.0) < -0.5);
        assert!(asym(70.0) < 0.0);
        assert!(asym(40.0) > 0.0);
        assert!(asym(30.0) > 0.5);
    }

    #[test]
    fn power_sweep_without_laser_has_no_readout() {
        let m = model();
        let s = power_sweep(&m, &[0.0, 550.0], 600.0, &linspace(-12.0, 12.0, 97)).unwrap();
        assert!(s.series[0].values[0].is_nan());
        assert_eq!(s.series[1].values[0], 0.0);
        assert!((s.series[0].values[1] - 0.70).abs() < 0.01, "{:?}", s.series[0].values);
    }

    #[test]
    fn map_axes_are_recentred() {
        let m = model();
        let offs = linspace(-10.0, 10.0, 41);
        let maps = esr_field_map(&m, &offs, &[100.0, 300.0], 50.0).unwrap();
        assert_eq!(maps.len(), 2);
        assert_eq!(maps[1].x, offs);
        assert_eq!(maps[1].meta["B_G"], "300");
    }

    #[test]
    fn pump_probe_spec_validation() {
        let mut s = PumpProbeSpec::default();
        assert!(s.validate().is_ok());
        assert_eq!(s.cycle(), 505.0);
        s.cycle_period = Some(200.0);
        assert!(s.validate().is_err());
        let s = PumpProbeSpec {
            probe_duration: 0.0,
            ..Default::default()
        };
        assert!(s.validate().is_err());
        let s = PumpProbeSpec {
            wait_times: vec![10.0, 10.0],
            ..Default::default()
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn pump_probe_is_deterministic_with_noise() {
        let m = model();
        let spec = PumpProbeSpec::default();
        let offs = linspace(-12.0, 12.0, 49);
        let sig = probe_signals(&m, &spec, &offs).unwrap();
        let n = ShotNoise { level: 0.03, seed: 7 };
        let a = pump_probe_from_signals(&m, &spec, &sig, Some(n)).unwrap();
        let b = pump_probe_from_signals(&m, &spec, &sig, Some(n)).unwrap();
        assert_eq!(a.sweep.y(), b.sweep.y());
        let c = pump_probe_from_signals(&m, &spec, &sig, Some(ShotNoise { seed: 8, ..n })).unwrap();
        assert_ne!(a.sweep.y(), c.sweep.y());
    }

    #[test]
    fn noise_wiggles_do_not_hide_the_weak_dip() {
        let m = model();
        let spec = PumpProbeSpec::default();
        let offs = linspace(-6.0, 6.0, 97);
        let sig = probe_signals(&m, &spec, &offs).unwrap();
        let lines = m.line_frequencies(spec.b).unwrap();
        let clean = polarization_series(&sig.frequencies, &[sig.delta(2)], lines).unwrap()[0];
        let noisy = sig.noisy_deltas(&ShotNoise { level: 0.03, seed: 43 });
        let p = read_doublet(&sig.frequencies, &noisy[2], lines).unwrap().polarization;
        assert!((p - clean).abs() < 0.1, "{p} vs {clean}");
    }
}
