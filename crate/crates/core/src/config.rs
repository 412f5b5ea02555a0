//! JSON configuration with a strict schema.
//!
//! Every key has a default, so `{}` is a complete config. Unknown keys are
//! rejected with the nearest known sibling as a hint; type errors and range
//! violations name the full key path.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dynamics::RateParams;
use crate::experiments::{Model, PumpProbeSpec, Readout, DEFAULT_K_POL};
use crate::hamiltonian::{DipoleGeometry, HamiltonianError, PhysicalConstants, SystemParams};
use crate::sweep::{arange_inclusive, linspace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed config at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("unknown key `{path}`{}", suggestion.as_ref().map(|s| format!(" (did you mean `{s}`?)")).unwrap_or_default())]
    UnknownKey { path: String, suggestion: Option<String> },
    #[error("`{path}`: {message}")]
    Type { path: String, message: String },
    #[error("`{key}`: {message}")]
    Invalid { key: String, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstantsConfig {
    pub bohr_mhz_per_gauss: f64,
}

impl Default for ConstantsConfig {
    fn default() -> Self {
        Self {
            bohr_mhz_per_gauss: PhysicalConstants::default().bohr_mhz_per_gauss,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub d: f64,
    pub g_nv: f64,
    pub g_n: f64,
    pub a: f64,
    pub include_nucleus: bool,
    pub include_hyperfine: bool,
    pub custom_a: bool,
}

impl Default for SystemConfig {
    fn default() -> Self {
        let p = SystemParams::default();
        Self {
            d: p.d,
            g_nv: p.g_nv,
            g_n: p.g_n,
            a: p.a,
            include_nucleus: p.include_nucleus,
            include_hyperfine: p.include_hyperfine,
            custom_a: p.custom_a,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub r: f64,
    pub theta: f64,
    pub phi: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            r: 2.3,
            theta: 90.0,
            phi: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatesConfig {
    pub k_pol: f64,
    pub gamma2: f64,
    pub t1_n: f64,
    pub esr_rate: f64,
    pub esr_linewidth: f64,
    pub w_hf: f64,
    pub t1_nuc: f64,
    pub pl_rate: f64,
    pub pl_contrast: f64,
}

impl Default for RatesConfig {
    fn default() -> Self {
        let r = RateParams::default();
        Self {
            k_pol: DEFAULT_K_POL,
            gamma2: r.gamma2,
            t1_n: r.t1_n,
            esr_rate: r.esr_rate,
            esr_linewidth: r.esr_linewidth,
            w_hf: r.w_hf,
            t1_nuc: r.t1_nuc,
            pl_rate: r.pl_rate,
            pl_contrast: r.pl_contrast,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LevelsConfig {
    pub b_min: f64,
    pub b_max: f64,
    pub b_step: f64,
}

impl Default for LevelsConfig {
    fn default() -> Self {
        Self {
            b_min: 0.0,
            b_max: 1000.0,
            b_step: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldSweepConfig {
    pub b_min: f64,
    pub b_max: f64,
    pub b_step: f64,
    pub power: f64,
    pub include_nucleus: bool,
}

impl Default for FieldSweepConfig {
    fn default() -> Self {
        Self {
            b_min: 480.0,
            b_max: 550.0,
            b_step: 0.1,
            power: 100.0,
            include_nucleus: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EsrConfig {
    pub b: f64,
    pub power: f64,
    /// Half-span of the frequency axis around D − g μ_B B, MHz.
    pub f_span: f64,
    pub f_points: usize,
}

impl Default for EsrConfig {
    fn default() -> Self {
        Self {
            b: 100.0,
            power: 100.0,
            f_span: 12.0,
            f_points: 97,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EsrMapConfig {
    pub b_min: f64,
    pub b_max: f64,
    pub b_step: f64,
    pub power: f64,
    pub f_span: f64,
    pub f_points: usize,
}

impl Default for EsrMapConfig {
    fn default() -> Self {
        Self {
            b_min: 400.0,
            b_max: 630.0,
            b_step: 2.0,
            power: 100.0,
            f_span: 15.0,
            f_points: 121,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerSweepConfig {
    pub b: f64,
    pub powers: Vec<f64>,
    pub f_span: f64,
    pub f_points: usize,
}

impl Default for PowerSweepConfig {
    fn default() -> Self {
        Self {
            b: 600.0,
            powers: vec![0.0, 25.0, 50.0, 100.0, 150.0, 200.0, 300.0, 400.0, 550.0, 700.0, 1000.0],
            f_span: 12.0,
            f_points: 97,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PumpProbeConfig {
    pub b: f64,
    pub power: f64,
    pub pump: f64,
    pub probe: f64,
    pub wait: Vec<f64>,
    pub cycle: Option<f64>,
    pub f_span: f64,
    pub f_points: usize,
    /// Relative ΔI_PL noise; 0 disables counting noise.
    pub noise: f64,
    /// "average" or "instant".
    pub readout: String,
}

impl Default for PumpProbeConfig {
    fn default() -> Self {
        let s = PumpProbeSpec::default();
        Self {
            b: s.b,
            power: s.power,
            pump: s.pump_duration,
            probe: s.probe_duration,
            wait: s.wait_times,
            cycle: s.cycle_period,
            f_span: 12.0,
            f_points: 97,
            noise: 0.0,
            readout: "average".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub constants: ConstantsConfig,
    pub system: SystemConfig,
    /// `null` removes the N-electron coupling.
    #[serde(default = "default_geometry")]
    pub geometry: Option<GeometryConfig>,
    pub rates: RatesConfig,
    pub levels: LevelsConfig,
    pub field_sweep: FieldSweepConfig,
    pub esr: EsrConfig,
    pub esr_map: EsrMapConfig,
    pub power_sweep: PowerSweepConfig,
    pub pump_probe: PumpProbeConfig,
}

fn default_geometry() -> Option<GeometryConfig> {
    Some(GeometryConfig::default())
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            constants: ConstantsConfig::default(),
            system: SystemConfig::default(),
            geometry: default_geometry(),
            rates: RatesConfig::default(),
            levels: LevelsConfig::default(),
            field_sweep: FieldSweepConfig::default(),
            esr: EsrConfig::default(),
            esr_map: EsrMapConfig::default(),
            power_sweep: PowerSweepConfig::default(),
            pump_probe: PumpProbeConfig::default(),
        }
    }
}

/// Key, default, provenance. Listed in `--help`.
pub const DOCUMENTED_DEFAULTS: &[(&str, &str, &str)] = &[
    ("seed", "0", "artifact default"),
    ("constants.bohr_mhz_per_gauss", "1.39962449", "CODATA"),
    ("system.d", "2880", "NV zero-field splitting, 2.88 GHz"),
    ("system.g_nv", "2.0", "g-factor of both centers"),
    ("system.g_n", "2.0", "g-factor of both centers"),
    ("system.a", "86", "14N hyperfine constant, MHz"),
    ("system.include_nucleus", "false", "artifact default"),
    ("system.include_hyperfine", "true", "artifact default"),
    ("system.custom_a", "false", "artifact default"),
    ("geometry.r", "2.3", "NV-N distance bound for the antiferromagnetic pair, nm"),
    ("geometry.theta", "90", "artifact default"),
    ("geometry.phi", "0", "artifact default"),
    ("rates.k_pol", "1.337", "artifact default (calibrated: P = 0.70 at 550 uW, 600 G)"),
    ("rates.gamma2", "0.1", "artifact default"),
    ("rates.t1_n", "75", "N-spin T1, us"),
    ("rates.esr_rate", "20", "artifact default"),
    ("rates.esr_linewidth", "1.0", "artifact default"),
    ("rates.w_hf", "0", "artifact default"),
    ("rates.t1_nuc", "10000", "artifact default"),
    ("rates.pl_rate", "50", "artifact default"),
    ("rates.pl_contrast", "0.3", "artifact default"),
    ("levels.b_min", "0", "artifact default"),
    ("levels.b_max", "1000", "artifact default"),
    ("levels.b_step", "1", "artifact default"),
    ("field_sweep.b_min", "480", "artifact default"),
    ("field_sweep.b_max", "550", "artifact default"),
    ("field_sweep.b_step", "0.1", "artifact default"),
    ("field_sweep.power", "100", "artifact default"),
    ("field_sweep.include_nucleus", "true", "artifact default"),
    ("esr.b", "100", "field of the reference ESR spectra, G"),
    ("esr.power", "100", "artifact default"),
    ("esr.f_span", "12", "artifact default"),
    ("esr.f_points", "97", "artifact default"),
    ("esr_map.b_min", "400", "artifact default"),
    ("esr_map.b_max", "630", "artifact default"),
    ("esr_map.b_step", "2", "artifact default"),
    ("esr_map.power", "100", "artifact default"),
    ("esr_map.f_span", "15", "artifact default"),
    ("esr_map.f_points", "121", "artifact default"),
    ("power_sweep.b", "600", "field of the power series, G"),
    ("power_sweep.powers", "[0, 25, 50, 100, 150, 200, 300, 400, 550, 700, 1000]", "artifact default"),
    ("power_sweep.f_span", "12", "artifact default"),
    ("power_sweep.f_points", "97", "artifact default"),
    ("pump_probe.b", "600", "artifact default"),
    ("pump_probe.power", "550", "laser power of the pump-probe run, uW"),
    ("pump_probe.pump", "100", "pump time, us"),
    ("pump_probe.probe", "5", "readout time, us"),
    ("pump_probe.wait", "[1, 10, 20, 35, 50, 75, 100, 140, 180, 240, 300, 400]", "artifact default"),
    ("pump_probe.cycle", "null (pump + probe + max wait)", "artifact default"),
    ("pump_probe.f_span", "12", "artifact default"),
    ("pump_probe.f_points", "97", "artifact default"),
    ("pump_probe.noise", "0", "artifact default"),
    ("pump_probe.readout", "average", "artifact default"),
];

/// Text block for `--help`.
pub fn defaults_help() -> String {
    let width = DOCUMENTED_DEFAULTS.iter().map(|d| d.0.len()).max().unwrap_or(0);
    let mut out = String::from("Config defaults (JSON keys):\n");
    for (key, value, note) in DOCUMENTED_DEFAULTS {
        out.push_str(&format!("  {key:<width$}  {value}  [{note}]\n"));
    }
    out
}

fn check_keys(value: &Value, schema: &Value, path: &str) -> Result<(), ConfigError> {
    let (Value::Object(user), Value::Object(known)) = (value, schema) else {
        return Ok(());
    };
    for (key, v) in user {
        let full = if path.is_empty() {
            key.clone()
        } else {
            format!("{path}.{key}")
        };
        match known.get(key) {
            Some(s) => check_keys(v, s, &full)?,
            None => {
                let suggestion = known
                    .keys()
                    .map(|k| (strsim::damerau_levenshtein(key, k), k))
                    .min()
                    .filter(|(d, k)| *d <= 3.max(k.len() / 2))
                    .map(|(_, k)| {
                        if path.is_empty() {
                            k.clone()
                        } else {
                            format!("{path}.{k}")
                        }
                    });
                return Err(ConfigError::UnknownKey {
                    path: full,
                    suggestion,
                });
            }
        }
    }
    Ok(())
}

/// Parses and validates JSON text.
pub fn parse_config(text: &str) -> Result<Config, ConfigError> {
    let value: Value = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if !value.is_object() {
        return Err(ConfigError::Type {
            path: "(root)".into(),
            message: "config must be a JSON object".into(),
        });
    }
    let schema = serde_json::to_value(Config::default()).expect("default config serializes");
    check_keys(&value, &schema, "")?;
    let config: Config = serde_path_to_error::deserialize(value).map_err(|e| ConfigError::Type {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<Config, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_config(&text)
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        message: message.into(),
    }
}

fn from_hamiltonian(e: HamiltonianError) -> ConfigError {
    match e {
        HamiltonianError::InvalidParameter { key, message } => invalid(key, message),
        HamiltonianError::SeparationTooSmall(r) => invalid("geometry.r", format!("must exceed 0.1 nm, got {r}")),
        other => invalid("(config)", other.to_string()),
    }
}

fn check_grid(key: &str, min: f64, max: f64, step: f64) -> Result<(), ConfigError> {
    if !(min.is_finite() && max.is_finite() && min >= 0.0) {
        return Err(invalid(key, format!("field range must be finite and >= 0 G, got [{min}, {max}]")));
    }
    if !(max > min) {
        return Err(invalid(key, format!("b_max must exceed b_min, got [{min}, {max}]")));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(invalid(key, format!("b_step must be > 0 G, got {step}")));
    }
    if (max - min) / step > 1e6 {
        return Err(invalid(key, "more than 10^6 grid points"));
    }
    Ok(())
}

fn check_freq(key: &str, span: f64, points: usize) -> Result<(), ConfigError> {
    if !(span > 0.0 && span.is_finite()) {
        return Err(invalid(&format!("{key}.f_span"), format!("must be > 0 MHz, got {span}")));
    }
    if points < 12 {
        return Err(invalid(&format!("{key}.f_points"), format!("need >= 12 points for the doublet fit, got {points}")));
    }
    Ok(())
}

fn check_power(key: &str, p: f64) -> Result<(), ConfigError> {
    if !(p.is_finite() && p >= 0.0) {
        return Err(invalid(key, format!("must be >= 0 uW, got {p}")));
    }
    Ok(())
}

impl Config {
    pub fn system_params(&self) -> SystemParams {
        SystemParams {
            d: self.system.d,
            g_nv: self.system.g_nv,
            g_n: self.system.g_n,
            a: self.system.a,
            b: 0.0,
            include_nucleus: self.system.include_nucleus,
            include_hyperfine: self.system.include_hyperfine,
            custom_a: self.system.custom_a,
        }
    }

    pub fn constants(&self) -> PhysicalConstants {
        PhysicalConstants {
            bohr_mhz_per_gauss: self.constants.bohr_mhz_per_gauss,
        }
    }

    pub fn geometry(&self) -> Option<DipoleGeometry> {
        self.geometry.as_ref().map(|g| DipoleGeometry::new(g.r, g.theta, g.phi))
    }

    pub fn rate_params(&self) -> RateParams {
        let r = &self.rates;
        RateParams {
            gamma_pol: 0.0,
            gamma2: r.gamma2,
            t1_n: r.t1_n,
            esr_rate: r.esr_rate,
            esr_linewidth: r.esr_linewidth,
            w_hf: r.w_hf,
            t1_nuc: r.t1_nuc,
            pl_rate: r.pl_rate,
            pl_contrast: r.pl_contrast,
        }
    }

    pub fn model(&self) -> Model {
        Model {
            params: self.system_params(),
            geometry: self.geometry(),
            constants: self.constants(),
            rates: self.rate_params(),
            k_pol: self.rates.k_pol,
        }
    }

    pub fn pump_probe_spec(&self) -> PumpProbeSpec {
        let p = &self.pump_probe;
        PumpProbeSpec {
            pump_duration: p.pump,
            probe_duration: p.probe,
            wait_times: p.wait.clone(),
            cycle_period: p.cycle,
            power: p.power,
            b: p.b,
            readout: if p.readout == "instant" {
                Readout::Instant
            } else {
                Readout::Average
            },
        }
    }

    pub fn levels_grid(&self) -> Vec<f64> {
        let l = &self.levels;
        arange_inclusive(l.b_min, l.b_max, l.b_step)
    }

    pub fn field_sweep_grid(&self) -> Vec<f64> {
        let f = &self.field_sweep;
        arange_inclusive(f.b_min, f.b_max, f.b_step)
    }

    pub fn esr_map_grid(&self) -> Vec<f64> {
        let m = &self.esr_map;
        arange_inclusive(m.b_min, m.b_max, m.b_step)
    }

    pub fn frequency_offsets(span: f64, points: usize) -> Vec<f64> {
        linspace(-span, span, points)
    }

    /// SHA-256 of the canonical JSON form of the resolved config.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let c = self.constants.bohr_mhz_per_gauss;
        if !(c.is_finite() && c > 0.0) {
            return Err(invalid("constants.bohr_mhz_per_gauss", format!("must be > 0, got {c}")));
        }
        self.system_params().validate().map_err(from_hamiltonian)?;
        if let Some(g) = self.geometry() {
            g.validate().map_err(from_hamiltonian)?;
        }
        let k = self.rates.k_pol;
        if !(k.is_finite() && k >= 0.0) {
            return Err(invalid("rates.k_pol", format!("must be >= 0, got {k}")));
        }
        self.rate_params().validate().map_err(|e| match e {
            crate::dynamics::DynamicsError::InvalidRate { key, message } => invalid(&format!("rates.{key}"), message),
            other => invalid("rates", other.to_string()),
        })?;

        let l = &self.levels;
        check_grid("levels", l.b_min, l.b_max, l.b_step)?;
        let f = &self.field_sweep;
        check_grid("field_sweep", f.b_min, f.b_max, f.b_step)?;
        check_power("field_sweep.power", f.power)?;
        let e = &self.esr;
        if !(e.b.is_finite() && e.b >= 0.0) {
            return Err(invalid("esr.b", format!("must be >= 0 G, got {}", e.b)));
        }
        check_power("esr.power", e.power)?;
        check_freq("esr", e.f_span, e.f_points)?;
        let m = &self.esr_map;
        check_grid("esr_map", m.b_min, m.b_max, m.b_step)?;
        check_power("esr_map.power", m.power)?;
        check_freq("esr_map", m.f_span, m.f_points)?;
        let p = &self.power_sweep;
        if !(p.b.is_finite() && p.b >= 0.0) {
            return Err(invalid("power_sweep.b", format!("must be >= 0 G, got {}", p.b)));
        }
        if p.powers.is_empty() {
            return Err(invalid("power_sweep.powers", "needs at least one power"));
        }
        for &w in &p.powers {
            check_power("power_sweep.powers", w)?;
        }
        if p.powers.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("power_sweep.powers", "must be strictly increasing"));
        }
        check_freq("power_sweep", p.f_span, p.f_points)?;

        let pp = &self.pump_probe;
        if !(pp.b.is_finite() && pp.b >= 0.0) {
            return Err(invalid("pump_probe.b", format!("must be >= 0 G, got {}", pp.b)));
        }
        check_freq("pump_probe", pp.f_span, pp.f_points)?;
        if !(pp.noise.is_finite() && pp.noise >= 0.0) {
            return Err(invalid("pump_probe.noise", format!("must be >= 0, got {}", pp.noise)));
        }
        if pp.readout != "average" && pp.readout != "instant" {
            return Err(invalid(
                "pump_probe.readout",
                format!("must be \"average\" or \"instant\", got {:?}", pp.readout),
            ));
        }
        if pp.wait.len() < 6 {
            return Err(invalid("pump_probe.wait", format!("need >= 6 wait times for the T1 fit, got {}", pp.wait.len())));
        }
        self.pump_probe_spec().validate().map_err(|e| match e {
            crate::experiments::ExperimentError::InvalidSpec { key, message } => invalid(key, message),
            other => invalid("pump_probe", other.to_string()),
        })?;
        Ok(())
    }
}
