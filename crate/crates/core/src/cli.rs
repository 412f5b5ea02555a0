//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 runtime failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use crate::config::{defaults_help, load_config, Config};
use crate::experiments::{
    esr_field_map, esr_sweep, field_sweep, find_dips, power_sweep, pump_probe, read_doublet, ShotNoise,
};
use crate::fitting::{fit_double_lorentzian, fit_exp_decay, FitResult};
use crate::hamiltonian::{find_resonance_field, level_diagram, ResonanceCondition};
use crate::io::{read_csv, sweep_to_string, table_to_string, write_text};
use crate::sweep::SweepResult;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "nvpair", version, about = "NV center / nitrogen spin pair: levels, ESR, polarization and T1 simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// JSON config file
    #[arg(long)]
    config: PathBuf,
    /// Output CSV (standard output when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed; overrides the SEED environment variable and the config
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum FitModel {
    DoubleLorentzian,
    ExpDecay,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Eigenvalues versus field
    Levels(RunArgs),
    /// cw photoluminescence versus field
    FieldSweep(RunArgs),
    /// ESR spectrum ΔI_PL(f) at one field
    Esr(RunArgs),
    /// ESR spectra over a field range (long-format table)
    EsrMap(RunArgs),
    /// N polarization versus laser power
    PowerSweep(RunArgs),
    /// Polarization versus dark time and T1 fit
    PumpProbe(RunArgs),
    /// Fit a model to a two-column CSV
    Fit {
        #[arg(long, value_enum)]
        model: FitModel,
        /// CSV with x in the first column and y in the second
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct Output {
    csv: String,
    summary: String,
    failed: bool,
}

fn effective_seed(flag: Option<u64>, config: &Config) -> Result<u64, String> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("SEED") {
        Ok(v) => v.trim().parse().map_err(|_| format!("SEED must be an unsigned integer, got {v:?}")),
        Err(_) => Ok(config.seed),
    }
}

fn stamp(mut r: SweepResult, config: &Config, seed: u64, command: &str) -> SweepResult {
    r.meta.insert("command".into(), command.into());
    r.meta.insert("config_sha256".into(), config.hash());
    r.meta.insert("seed".into(), seed.to_string());
    r
}

fn fmt_fit(fit: &FitResult) -> String {
    let mut s = format!(
        "{} fit: converged={} iterations={} sse={:.6e}{}\n",
        fit.model,
        fit.converged,
        fit.iterations,
        fit.sse,
        if fit.unreliable { " (UNRELIABLE: dips overlap)" } else { "" }
    );
    for ((n, v), e) in fit.names.iter().zip(&fit.values).zip(&fit.stderr) {
        s.push_str(&format!("  {n:<6} = {v:.6} ± {e:.3}\n"));
    }
    s
}

fn run_experiment(cmd: &Command, config: &Config, seed: u64) -> Result<Output, String> {
    let model = config.model();
    let err = |e: crate::experiments::ExperimentError| e.to_string();
    let (name, result, summary) = match cmd {
        Command::Levels(_) => {
            let grid = config.levels_grid();
            let r = level_diagram(&config.system_params(), config.geometry().as_ref(), &grid, &config.constants())
                .map_err(|e| e.to_string())?;
            let mut s = format!("{} levels over B = {}..{} G\n", r.series.len(), grid[0], grid[grid.len() - 1]);
            for mi in [1i8, 0, -1] {
                if let Ok(b) = find_resonance_field(&config.system_params(), &config.constants(), &ResonanceCondition::new(mi)) {
                    s.push_str(&format!("  resonance m_I={mi:+}: {b:.2} G\n"));
                }
            }
            ("levels", r, s)
        }
        Command::FieldSweep(_) => {
            let fs = &config.field_sweep;
            let m = model.with_nucleus(fs.include_nucleus);
            let r = field_sweep(&m, &config.field_sweep_grid(), fs.power).map_err(err)?;
            let dips = find_dips(&r.x, r.y(), 1e-6 * m.rates.pl_rate);
            let list: Vec<String> = dips.iter().map(|d| format!("{d:.2}")).collect();
            let s = format!("dips at B = [{}] G\n", list.join(", "));
            ("field-sweep", r, s)
        }
        Command::Esr(_) => {
            let e = &config.esr;
            let f0 = model.center_frequency(e.b);
            let f: Vec<f64> = Config::frequency_offsets(e.f_span, e.f_points).iter().map(|o| f0 + o).collect();
            let r = esr_sweep(&model, &f, e.b, e.power).map_err(err)?;
            let lines = model.line_frequencies(e.b).map_err(err)?;
            let s = match read_doublet(&r.x, r.y(), lines) {
                Ok(d) => format!(
                    "center {f0:.2} MHz, splitting {:.3} MHz, P = {:.4}\n{}",
                    d.fit.value("c2") - d.fit.value("c1"),
                    d.polarization,
                    fmt_fit(&d.fit)
                ),
                Err(e) => format!("center {f0:.2} MHz; doublet fit failed: {e}\n"),
            };
            ("esr", r, s)
        }
        Command::EsrMap(_) => {
            let m = &config.esr_map;
            let grid = config.esr_map_grid();
            let offs = Config::frequency_offsets(m.f_span, m.f_points);
            let maps = esr_field_map(&model, &offs, &grid, m.power).map_err(err)?;
            let mut rows = Vec::new();
            for (b, s) in grid.iter().zip(&maps) {
                for (o, d) in s.x.iter().zip(s.y()) {
                    rows.push(vec![*b, *o, *d]);
                }
            }
            let mut meta = BTreeMap::new();
            meta.insert("command".to_string(), "esr-map".to_string());
            meta.insert("config_sha256".to_string(), config.hash());
            meta.insert("seed".to_string(), seed.to_string());
            meta.insert("power_uW".to_string(), m.power.to_string());
            let labels = ["B [G]", "f - f0 [MHz]", "dI_PL [counts/us]"].map(String::from);
            return Ok(Output {
                csv: table_to_string(&labels, &rows, &meta),
                summary: format!("{} spectra x {} frequencies\n", grid.len(), offs.len()),
                failed: false,
            });
        }
        Command::PowerSweep(_) => {
            let p = &config.power_sweep;
            let offs = Config::frequency_offsets(p.f_span, p.f_points);
            let r = power_sweep(&model, &p.powers, p.b, &offs).map_err(err)?;
            let mut s = String::from("power [uW]   P (fit)   P (populations)\n");
            for i in 0..r.len() {
                s.push_str(&format!("{:>10.1}   {:>7.4}   {:>7.4}\n", r.x[i], r.series[0].values[i], r.series[1].values[i]));
            }
            s.push_str(&format!("unreliable points: {}\n", r.meta["unreliable_points"]));
            ("power-sweep", r, s)
        }
        Command::PumpProbe(_) => {
            let pp = &config.pump_probe;
            let offs = Config::frequency_offsets(pp.f_span, pp.f_points);
            let noise = (pp.noise > 0.0).then_some(ShotNoise { level: pp.noise, seed });
            let res = pump_probe(&model, &config.pump_probe_spec(), &offs, noise).map_err(err)?;
            let t1 = res.t1();
            let e = res.fit.stderr_of("t1").unwrap_or(f64::NAN);
            let s = format!("T1 = {t1:.2} ± {e:.2} us\n{}", fmt_fit(&res.fit));
            let failed = !res.fit.converged;
            return Ok(Output {
                csv: sweep_to_string(&stamp(res.sweep, config, seed, "pump-probe")),
                summary: s,
                failed,
            });
        }
        Command::Fit { .. } => unreachable!("fit is handled separately"),
    };
    Ok(Output {
        csv: sweep_to_string(&stamp(result, config, seed, name)),
        summary,
        failed: false,
    })
}

fn run_fit(model: FitModel, data: &Path) -> Result<Output, (i32, String)> {
    let table = read_csv(data).map_err(|e| (EXIT_CONFIG, e.to_string()))?;
    if table.columns.len() < 2 {
        return Err((EXIT_CONFIG, format!("{}: need at least two columns", data.display())));
    }
    let (x, y) = (&table.columns[0], &table.columns[1]);
    let peaks = model == FitModel::DoubleLorentzian && looks_like_peaks(y);
    let fit = match model {
        FitModel::DoubleLorentzian if peaks => {
            let flipped: Vec<f64> = y.iter().map(|v| -v).collect();
            fit_double_lorentzian(x, &flipped).map(|mut f| {
                f.values[0] = -f.values[0];
                f
            })
        }
        FitModel::DoubleLorentzian => fit_double_lorentzian(x, y),
        FitModel::ExpDecay => fit_exp_decay(x, y),
    }
    .map_err(|e| (EXIT_RUNTIME, format!("fit failed: {e}")))?;
    let mut summary = fmt_fit(&fit);
    if let (Some(t1), Some(e)) = (fit.get("t1"), fit.stderr_of("t1")) {
        summary = format!("T1 = {t1:.2} ± {e:.2} us\n{summary}");
    }
    let mut csv = String::from("# parameter, value, stderr\n");
    csv.push_str(&format!(
        "# meta: model={}, converged={}, iterations={}, sse={:.16e}, unreliable={}{}\n",
        fit.model,
        fit.converged,
        fit.iterations,
        fit.sse,
        fit.unreliable,
        if peaks { ", orientation=peaks" } else { "" }
    ));
    if peaks {
        summary = format!("data are peaks; fitted as y = b + a1*L1 + a2*L2\n{summary}");
    }
    for ((n, v), e) in fit.names.iter().zip(&fit.values).zip(&fit.stderr) {
        csv.push_str(&format!("{n},{v:.16e},{e:.16e}\n"));
    }
    Ok(Output {
        csv,
        summary,
        failed: !fit.converged,
    })
}

/// Peaks rather than dips: the extreme value furthest from the median is a maximum.
fn looks_like_peaks(y: &[f64]) -> bool {
    let mut sorted: Vec<f64> = y.iter().copied().filter(|v| v.is_finite()).collect();
    if sorted.is_empty() {
        return false;
    }
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    sorted[sorted.len() - 1] - median > median - sorted[0]
}

fn emit(output: &Output, out: Option<&PathBuf>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    match out {
        Some(path) => {
            if let Err(e) = write_text(&output.csv, path) {
                let _ = writeln!(stderr, "error: {e}");
                return EXIT_RUNTIME;
            }
            let _ = write!(stdout, "{}", output.summary);
        }
        None => {
            let _ = write!(stdout, "{}", output.csv);
            let _ = write!(stderr, "{}", output.summary);
        }
    }
    if output.failed {
        let _ = writeln!(stderr, "error: fit did not converge within the iteration cap");
        return EXIT_RUNTIME;
    }
    EXIT_OK
}

/// Runs the CLI with explicit streams; returns the exit code.
pub fn run_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let command = Cli::command().after_long_help(defaults_help());
    let matches = match command.try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().ansi().to_string();
            if e.use_stderr() {
                let _ = write!(stderr, "{text}");
            } else {
                let _ = write!(stdout, "{text}");
            }
            return code;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(stderr, "{e}");
            return EXIT_CONFIG;
        }
    };

    if let Command::Fit { model, data, out } = &cli.command {
        return match run_fit(*model, data) {
            Ok(o) => emit(&o, out.as_ref(), stdout, stderr),
            Err((code, msg)) => {
                let _ = writeln!(stderr, "error: {msg}");
                code
            }
        };
    }

    let args = match &cli.command {
        Command::Levels(a)
        | Command::FieldSweep(a)
        | Command::Esr(a)
        | Command::EsrMap(a)
        | Command::PowerSweep(a)
        | Command::PumpProbe(a) => a,
        Command::Fit { .. } => unreachable!(),
    };
    let config = match load_config(&args.config) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(stderr, "config error: {e}");
            return EXIT_CONFIG;
        }
    };
    let seed = match effective_seed(args.seed, &config) {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(stderr, "config error: {e}");
            return EXIT_CONFIG;
        }
    };
    match run_experiment(&cli.command, &config, seed) {
        Ok(o) => emit(&o, args.out.as_ref(), stdout, stderr),
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_RUNTIME
        }
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(args, &mut std::io::stdout(), &mut std::io::stderr())
}
