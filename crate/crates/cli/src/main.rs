//! `cavsim`: run step-2 simulations, sweeps and drive calibration from a
//! config file, writing CSV/JSON artifacts and a manifest.

mod manifest;

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde_json::json;

use cavsim::experiments::{
    calibrate_omega0, fiber_mode_convergence, linspace, run_short_step2, sweep_fidelity_vs_fiber_loss,
    sweep_phase_vs_omega, CalibrationOptions, LossAxis, Step2Options, SweepTable,
};
use cavsim::hilbert::AtomBInit;
use cavsim::inout::{emit, long_drives, long_grid, run_long_gate};
use cavsim::params::{classify_regime, validate, ParameterSet, RegimeTag};
use cavsim::Error;

use manifest::Recorder;

#[derive(Parser)]
#[command(name = "cavsim", version, about = "Controlled-phase gate between two fiber-linked cavity nodes")]
struct Cli {
    /// Worker threads (default: available parallelism); CAVSIM_JOBS overrides
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run step 2 for one atom-B branch
    Simulate {
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = RegimeArg::Auto)]
        regime: RegimeArg,
        #[arg(long, default_value = "g2")]
        atom_b: AtomBInit,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Sweep one parameter and write a CSV table
    Sweep {
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long)]
        from: f64,
        #[arg(long)]
        to: f64,
        #[arg(long)]
        points: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Find the drive amplitude giving the target conditional phase
    Calibrate {
        config: PathBuf,
        #[arg(long, default_value_t = PI, allow_hyphen_values = true)]
        target_phase: f64,
        /// Lower end of the Ω0 search range (default 0.2 g_A)
        #[arg(long)]
        from: Option<f64>,
        /// Upper end of the Ω0 search range (default 0.8 g_A)
        #[arg(long)]
        to: Option<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum RegimeArg {
    Short,
    Long,
    Auto,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Axis {
    Omega0,
    KappaF,
    KappaL,
    Modes,
}

impl Axis {
    fn name(self) -> &'static str {
        match self {
            Axis::Omega0 => "omega0",
            Axis::KappaF => "kappa_f",
            Axis::KappaL => "kappa_l",
            Axis::Modes => "modes",
        }
    }
}

enum Failure {
    Config(String),
    Simulation { stage: &'static str, error: Error },
    NoBracket(Error),
    Io(std::io::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Simulation { .. } | Failure::Io(_) => 3,
            Failure::NoBracket(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Simulation { stage, error } => write!(f, "simulation failed in stage '{stage}': {error}"),
            Failure::NoBracket(e) => write!(f, "calibration failed: {e}"),
            Failure::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e)
    }
}

/// Classify a core error raised in `stage`.
fn fail(stage: &'static str) -> impl Fn(Error) -> Failure {
    move |error| match error {
        Error::NoBracket { .. } => Failure::NoBracket(error),
        Error::Config { .. }
        | Error::NonPositiveRate { .. }
        | Error::InvalidParameter { .. }
        | Error::InconsistentGeometry { .. }
        | Error::MissingGeometry
        | Error::InvalidSweep(_) => Failure::Config(error.to_string()),
        _ => Failure::Simulation { stage, error },
    }
}

/// Parsed config as written back for the manifest, and its validated form.
fn load_config(path: &Path) -> Result<(String, ParameterSet), Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let raw = ParameterSet::from_config_str(&text).map_err(fail("config"))?;
    let p = validate(&raw).map_err(fail("config"))?;
    Ok((raw.to_config_string(), p))
}

fn regime_name(tag: RegimeTag) -> &'static str {
    match tag {
        RegimeTag::Short => "short",
        RegimeTag::Long => "long",
        RegimeTag::Ambiguous => "ambiguous",
    }
}

fn json_bytes<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable result");
    s.push('\n');
    s.into_bytes()
}

fn simulate(config: &Path, regime: RegimeArg, atom_b: AtomBInit, out: &Path) -> Result<(), Failure> {
    let (snapshot, p) = load_config(config)?;
    let args = json!({ "config": config, "regime": regime_arg_name(regime), "atom_b": atom_b.to_string() });
    let mut rec = Recorder::new(out, "simulate", args, snapshot)?;
    let classified = classify_regime(&p, p.pulse.delta_t);
    let tag = match regime {
        RegimeArg::Short => RegimeTag::Short,
        RegimeArg::Long => RegimeTag::Long,
        RegimeArg::Auto => classified.tag,
    };
    rec.set_regime(regime_name(tag));
    match tag {
        RegimeTag::Short => {
            let r = rec
                .stage("propagate", || run_short_step2(&p, p.pulse.omega0, atom_b))
                .map_err(fail("propagate"))?;
            let body = json!({
                "regime": "short",
                "regime_margin": classified.margin,
                "result": r.summary(),
                "steps": r.trajectory.stats,
            });
            rec.write("step2_result.json", &json_bytes(&body))?;
            let indices: Vec<usize> = (0..r.trajectory.final_state().amps.len()).collect();
            rec.write("trajectory.csv", r.trajectory.to_csv(&indices).as_bytes())?;
        }
        RegimeTag::Long => {
            let r = rec
                .stage("long_gate", || run_long_gate(&p, atom_b))
                .map_err(fail("long_gate"))?;
            let body = json!({
                "regime": "long",
                "regime_margin": classified.margin,
                "result": r,
                "accounted": r.accounted(),
            });
            rec.write("step2_result.json", &json_bytes(&body))?;
            let envelope = rec
                .stage("emission", || {
                    let (drive, _) = long_drives(&p)?;
                    emit(&p, &drive, &long_grid(&p))
                })
                .map_err(fail("emission"))?
                .envelope;
            rec.write("trajectory.csv", envelope.to_csv().as_bytes())?;
        }
        RegimeTag::Ambiguous => {
            return Err(Failure::Config(format!(
                "parameters classify as neither short nor long (margin {:.3}); pass --regime short or --regime long",
                classified.margin
            )))
        }
    }
    let m = rec.finish()?;
    println!("regime {}; wrote {} files to {}", m.regime, m.outputs.len() + 1, out.display());
    Ok(())
}

fn regime_arg_name(r: RegimeArg) -> &'static str {
    match r {
        RegimeArg::Short => "short",
        RegimeArg::Long => "long",
        RegimeArg::Auto => "auto",
    }
}

fn sweep(config: &Path, axis: Axis, from: f64, to: f64, points: usize, out: &Path) -> Result<(), Failure> {
    let (snapshot, p) = load_config(config)?;
    if points == 0 {
        return Err(Failure::Config("--points must be at least 1".into()));
    }
    if !(from.is_finite() && to.is_finite()) || (points > 1 && to <= from) {
        return Err(Failure::Config(format!("sweep range must satisfy from < to, got {from}..{to}")));
    }
    let args = json!({ "config": config, "axis": axis.name(), "from": from, "to": to, "points": points });
    let mut rec = Recorder::new(out, "sweep", args, snapshot)?;
    let values = linspace(from, to, points);
    let opts = Step2Options::default();
    let amps = [Complex64::new(0.5, 0.0); 4];
    let regime = match axis {
        Axis::KappaL => "long",
        _ => "short",
    };
    rec.set_regime(regime);
    let table: SweepTable = rec
        .stage("sweep", || match axis {
            Axis::Omega0 => sweep_phase_vs_omega(&p, &values, &opts),
            Axis::KappaF => sweep_fidelity_vs_fiber_loss(&p, p.pulse.omega0, LossAxis::KappaF, &values, &amps, &opts),
            Axis::KappaL => sweep_fidelity_vs_fiber_loss(&p, p.pulse.omega0, LossAxis::KappaL, &values, &amps, &opts),
            Axis::Modes => {
                let modes: Vec<usize> = values.iter().map(|v| v.round().max(0.0) as usize).collect();
                if modes.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidSweep("mode cutoffs must be distinct integers".into()));
                }
                fiber_mode_convergence(&p, p.pulse.omega0, &modes, &opts)
            }
        })
        .map_err(fail("sweep"))?;
    let file = format!("sweep_{}.csv", axis.name());
    rec.write(&file, table.to_csv().as_bytes())?;
    rec.finish()?;
    println!("{} rows written to {}", table.len(), out.join(file).display());
    Ok(())
}

fn calibrate(
    config: &Path,
    target: f64,
    from: Option<f64>,
    to: Option<f64>,
    out: &Path,
) -> Result<(), Failure> {
    let (snapshot, p) = load_config(config)?;
    let mut copts = CalibrationOptions::for_params(&p);
    copts.target = target;
    copts.lo = from.unwrap_or(copts.lo);
    copts.hi = to.unwrap_or(copts.hi);
    let args = json!({ "config": config, "target_phase": target, "from": copts.lo, "to": copts.hi });
    let mut rec = Recorder::new(out, "calibrate", args, snapshot)?;
    rec.set_regime("short");
    let cal = rec
        .stage("calibrate", || calibrate_omega0(&p, &copts, &Step2Options::default()))
        .map_err(fail("calibrate"))?;
    let body = json!({
        "target_phase": target,
        "tolerance": copts.tol,
        "omega0": cal.omega0,
        "omega0_over_g_a": cal.omega0 / p.g_a,
        "phase_difference": cal.phase_difference,
        "wrapped_phase_difference": cal.pair.phase_difference(),
        "p1": cal.pair.g0.p,
        "p2": cal.pair.g2.p,
        "log": cal.log,
    });
    rec.write("calibration.json", &json_bytes(&body))?;
    rec.finish()?;
    println!(
        "omega0* = {} ({:.4} g_A), phi2 - phi1 = {:.6}",
        cal.omega0,
        cal.omega0 / p.g_a,
        cal.phase_difference
    );
    Ok(())
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, Failure> {
    match std::env::var("CAVSIM_JOBS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Failure::Config(format!("CAVSIM_JOBS must be a positive integer, got '{v}'"))),
        },
        Err(_) => match flag {
            Some(0) => Err(Failure::Config("--jobs must be positive".into())),
            other => Ok(other),
        },
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = thread_count(cli.jobs)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config(format!("worker pool: {e}")))?;
    }
    match cli.command {
        Command::Simulate {
            config,
            regime,
            atom_b,
            out,
        } => simulate(&config, regime, atom_b, &out),
        Command::Sweep {
            config,
            axis,
            from,
            to,
            points,
            out,
        } => sweep(&config, axis, from, to, points, &out),
        Command::Calibrate {
            config,
            target_phase,
            from,
            to,
            out,
        } => calibrate(&config, target_phase, from, to, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cavsim: {e}");
            ExitCode::from(e.code())
        }
    }
}
