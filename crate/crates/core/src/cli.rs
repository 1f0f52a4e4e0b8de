//! Command-line front end.

use std::error::Error as StdError;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::config::{parse_config, parse_config_str, RunConfig};
use crate::element::{classify, AmpPort, ComplexGain, DEFAULT_CLASSIFY_TOL};
use crate::fading::{db_to_linear, dbm_to_watts};
use crate::link::{defaults, AlignTarget, ElementConfig, User};
use crate::mc::{sweep, Axis, Metric, SweepResult};
use crate::pattern::{radiation_pattern, ArrayGeometry, ConfigKind, PatternOptions, RadiationPattern};
use crate::report::generate_report;
use crate::validate::run_suite;

type CliResult<T> = std::result::Result<T, Box<dyn StdError>>;

#[derive(Parser, Debug)]
#[command(name = "star-ris", version, about = "Active STAR surface link simulator")]
struct Cli {
    /// TOML scenario file; omitted keys take the built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(0..=i64::MAX as u64))]
    seed: Option<u64>,
    /// Monte Carlo trials per point (overrides the config file).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    trials: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..1024))]
    workers: Option<u64>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the T&R matrix and energy class of one element.
    Element(ElementArgs),
    /// Angular array-factor CSV for the three element configurations.
    Pattern(PatternArgs),
    /// Outage probability versus transmit power.
    Outage(OutageArgs),
    /// Mean SNR versus element count.
    Scaling(ScalingArgs),
    /// Run the invariant and oracle suite.
    Validate(ValidateArgs),
}

#[derive(Args, Debug)]
struct GainArgs {
    /// Amplifier power gain in dB.
    #[arg(long, conflicts_with = "gain", allow_negative_numbers = true)]
    gain_db: Option<f64>,
    /// Amplifier amplitude gain (linear).
    #[arg(long, allow_negative_numbers = true)]
    gain: Option<f64>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    phase_deg: f64,
}

impl GainArgs {
    fn resolve(&self) -> CliResult<ComplexGain> {
        let amp = match (self.gain_db, self.gain) {
            (_, Some(g)) => g,
            (Some(db), None) => db_to_linear(db).sqrt(),
            (None, None) => db_to_linear(defaults::AMPLIFIER_GAIN_DB).sqrt(),
        };
        Ok(ComplexGain::new(amp, self.phase_deg.to_radians())?)
    }
}

#[derive(Args, Debug)]
struct ElementArgs {
    /// Single amplifier (default).
    #[arg(long, conflicts_with = "independent")]
    coupled: bool,
    /// Two amplifiers.
    #[arg(long)]
    independent: bool,
    #[command(flatten)]
    gain: GainArgs,
    /// Hybrid port holding the amplifier of a coupled element.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(2..=3))]
    amp_port: u8,
    /// Second amplifier power gain in dB; defaults to the first.
    #[arg(long, conflicts_with = "gain3", allow_negative_numbers = true)]
    gain3_db: Option<f64>,
    /// Second amplifier amplitude gain.
    #[arg(long, allow_negative_numbers = true)]
    gain3: Option<f64>,
    /// Second amplifier phase; defaults to the first plus 90 degrees.
    #[arg(long, allow_negative_numbers = true)]
    phase3_deg: Option<f64>,
}

#[derive(Args, Debug)]
struct PatternArgs {
    #[command(flatten)]
    gain: GainArgs,
    /// Angle of user A on the reflection side, degrees in [0, 180].
    #[arg(long, default_value_t = 20.0)]
    theta_a: f64,
    /// Angle of user B on the transmission side, degrees in (180, 360).
    #[arg(long, default_value_t = 190.0)]
    theta_b: f64,
    #[arg(long, default_value_t = 18)]
    rows: usize,
    #[arg(long, default_value_t = 18)]
    cols: usize,
    /// Element spacing in wavelengths.
    #[arg(long, default_value_t = defaults::ELEMENT_SPACING_WAVELENGTHS)]
    spacing: f64,
    /// Steer for users at this range (wavelengths) instead of plane waves.
    #[arg(long)]
    user_distance: Option<f64>,
    /// Linear magnitudes instead of values normalized to the largest peak.
    #[arg(long)]
    raw: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum UserArg {
    A,
    B,
}

impl From<UserArg> for User {
    fn from(u: UserArg) -> Self {
        match u {
            UserArg::A => User::A,
            UserArg::B => User::B,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AlignArg {
    A,
    B,
    Both,
}

impl From<AlignArg> for AlignTarget {
    fn from(a: AlignArg) -> Self {
        match a {
            AlignArg::A => AlignTarget::UserA,
            AlignArg::B => AlignTarget::UserB,
            AlignArg::Both => AlignTarget::Both,
        }
    }
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Observed user.
    #[arg(long)]
    user: Option<UserArg>,
    /// Cophased side.
    #[arg(long)]
    align: Option<AlignArg>,
    /// Element count.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    elements: Option<u64>,
    /// Re-run exactly what a manifest describes.
    #[arg(long)]
    replay: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OutageArgs {
    #[command(flatten)]
    run: RunArgs,
    /// SNR threshold in dB.
    #[arg(long, allow_negative_numbers = true)]
    gamma_db: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    start_dbm: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    stop_dbm: Option<f64>,
    #[arg(long)]
    step_db: Option<f64>,
}

#[derive(Args, Debug)]
struct ScalingArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Element counts, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [16u64, 32, 64, 128, 256])]
    m_grid: Vec<u64>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    /// Also write the markdown traceability report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

/// Written next to every `outage` and `scaling` result file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    /// Fully resolved configuration.
    pub config_toml: String,
    /// Sweep grid: dBm for `outage`, element counts for `scaling`.
    pub grid: Vec<f64>,
    pub seed: u64,
    pub trials: u64,
    pub workers: Option<usize>,
    pub version: String,
    pub duration_s: f64,
    pub outputs: Vec<PathBuf>,
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Runs one invocation; returns the process exit code. `args` includes the
/// program name.
pub fn run_command<I, T, O, E>(args: I, out: &mut O, err: &mut E) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
    O: Write,
    E: Write,
{
    let argv: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return e.exit_code();
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(cli, &argv, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn dispatch<O: Write, E: Write>(cli: Cli, argv: &[String], out: &mut O, err: &mut E) -> CliResult<i32> {
    match &cli.command {
        Command::Element(a) => element(a, out).map(|_| 0),
        Command::Pattern(a) => pattern(a, cli.out.as_deref(), out).map(|_| 0),
        Command::Outage(a) => {
            let (rc, grid) = match &a.run.replay {
                Some(path) => replay_settings(&cli, path, "outage")?,
                None => {
                    let mut rc = base_config(&cli, &a.run)?;
                    if let Some(g) = a.gamma_db {
                        rc.gamma_target = db_to_linear(g);
                    }
                    rc.sweep.start_dbm = a.start_dbm.unwrap_or(rc.sweep.start_dbm);
                    rc.sweep.stop_dbm = a.stop_dbm.unwrap_or(rc.sweep.stop_dbm);
                    rc.sweep.step_db = a.step_db.unwrap_or(rc.sweep.step_db);
                    if !(rc.sweep.step_db > 0.0 && rc.sweep.stop_dbm >= rc.sweep.start_dbm) {
                        return Err("power sweep needs step > 0 and stop >= start".into());
                    }
                    let grid = rc.sweep.grid_dbm();
                    (rc, grid)
                }
            };
            let started = Instant::now();
            let watts: Vec<f64> = grid.iter().map(|&d| dbm_to_watts(d)).collect();
            let res = sweep(
                &rc.scenario,
                Axis::TransmitPower,
                &watts,
                Metric::Outage {
                    gamma_target: rc.gamma_target,
                },
                rc.align,
                rc.user,
                &rc.mc,
            )?;
            emit_sweep("outage", &rc, &grid, &res, started, argv, cli.out.as_deref(), out)?;
            Ok(0)
        }
        Command::Scaling(a) => {
            let (rc, grid) = match &a.run.replay {
                Some(path) => replay_settings(&cli, path, "scaling")?,
                None => {
                    let rc = base_config(&cli, &a.run)?;
                    let mut grid: Vec<f64> = a.m_grid.iter().map(|&m| m as f64).collect();
                    grid.sort_by(f64::total_cmp);
                    grid.dedup();
                    (rc, grid)
                }
            };
            let started = Instant::now();
            let res = sweep(
                &rc.scenario,
                Axis::ElementCount,
                &grid,
                Metric::MeanSnr,
                rc.align,
                rc.user,
                &rc.mc,
            )?;
            emit_sweep("scaling", &rc, &grid, &res, started, argv, cli.out.as_deref(), out)?;
            Ok(0)
        }
        Command::Validate(a) => {
            let results = run_suite();
            let mut failed = 0;
            for c in &results {
                if !c.passed {
                    failed += 1;
                }
                writeln!(
                    out,
                    "[{}] {} ({}): {} [tol {}]",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.anchor,
                    c.operation,
                    c.measured,
                    c.tolerance
                )?;
            }
            writeln!(out, "{} checks, {} failed", results.len(), failed)?;
            if let Some(path) = &a.report {
                match generate_report(&results) {
                    Ok(text) => fs::write(path, text)?,
                    Err(e) => {
                        writeln!(err, "error: {e}")?;
                        return Ok(1);
                    }
                }
            }
            Ok(if failed == 0 { 0 } else { 1 })
        }
    }
}

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    Ok(match &cli.config {
        Some(p) => parse_config(p)?,
        None => parse_config_str("")?,
    })
}

fn apply_mc_overrides(cli: &Cli, rc: &mut RunConfig) {
    if let Some(s) = cli.seed {
        rc.mc.master_seed = s;
    }
    if let Some(t) = cli.trials {
        rc.mc.trials = t;
        rc.mc.batch_size = rc.mc.batch_size.min(t);
    }
    rc.mc.workers = cli.workers.map(|w| w as usize);
}

fn base_config(cli: &Cli, run: &RunArgs) -> CliResult<RunConfig> {
    let mut rc = load_config(cli)?;
    if let Some(u) = run.user {
        rc.user = u.into();
    }
    if let Some(a) = run.align {
        rc.align = a.into();
    }
    if let Some(m) = run.elements {
        rc.scenario = rc.scenario.with_elements(m as usize);
    }
    apply_mc_overrides(cli, &mut rc);
    rc.scenario.validate()?;
    Ok(rc)
}

/// Settings recorded in a manifest. Only `--workers` and `--out` may differ
/// from the original run.
fn replay_settings(cli: &Cli, path: &Path, command: &str) -> CliResult<(RunConfig, Vec<f64>)> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let m: RunManifest = serde_json::from_str(&text)?;
    if m.command != command {
        return Err(format!("manifest is for `{}`, not `{command}`", m.command).into());
    }
    if m.version != env!("CARGO_PKG_VERSION") {
        return Err(format!(
            "manifest was written by version {}, this is {}",
            m.version,
            env!("CARGO_PKG_VERSION")
        )
        .into());
    }
    let mut rc = parse_config_str(&m.config_toml)?;
    rc.mc.workers = cli.workers.map(|w| w as usize).or(m.workers);
    Ok((rc, m.grid))
}

#[allow(clippy::too_many_arguments)]
fn emit_sweep<O: Write>(
    command: &str,
    rc: &RunConfig,
    grid: &[f64],
    res: &SweepResult,
    started: Instant,
    argv: &[String],
    path: Option<&Path>,
    out: &mut O,
) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "x",
        "estimate",
        "ci_low",
        "ci_high",
        "analytic_primary",
        "analytic_alt",
        "resolved",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    for (x, p) in grid.iter().zip(&res.points) {
        let e = &p.estimate;
        w.write_record([
            format!("{:?}", x),
            format!("{:?}", e.value),
            format!("{:?}", e.ci_low),
            format!("{:?}", e.ci_high),
            opt(p.analytic_primary),
            opt(p.analytic_alt),
            e.resolved.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| e.to_string())?;
    match path {
        None => out.write_all(&bytes)?,
        Some(path) => {
            fs::write(path, &bytes)?;
            let manifest = RunManifest {
                command: command.to_string(),
                argv: argv.to_vec(),
                config_toml: rc.to_toml(),
                grid: grid.to_vec(),
                seed: rc.mc.master_seed,
                trials: rc.mc.trials,
                workers: rc.mc.workers,
                version: env!("CARGO_PKG_VERSION").to_string(),
                duration_s: started.elapsed().as_secs_f64(),
                outputs: vec![path.to_path_buf()],
            };
            fs::write(manifest_path(path), serde_json::to_string_pretty(&manifest)?)?;
        }
    }
    Ok(())
}

fn element<O: Write>(a: &ElementArgs, out: &mut O) -> CliResult<()> {
    let g = a.gain.resolve()?;
    let config = if a.independent {
        let amp3 = match (a.gain3_db, a.gain3) {
            (_, Some(v)) => v,
            (Some(db), None) => db_to_linear(db).sqrt(),
            (None, None) => g.amplitude(),
        };
        let phase3 = a
            .phase3_deg
            .map(f64::to_radians)
            .unwrap_or(g.phase() + defaults::INDEPENDENT_SPLIT_DEG.to_radians());
        ElementConfig::Independent {
            g2: g,
            g3: ComplexGain::new(amp3, phase3)?,
        }
    } else {
        ElementConfig::Coupled {
            gain: g,
            amp_port: AmpPort::from_number(a.amp_port)?,
        }
    };
    let m = config.base_matrix()?;
    let c = classify(&m, DEFAULT_CLASSIFY_TOL);
    writeln!(
        out,
        "{} element, |G| = {:.6}, phase {:.3} deg",
        config.kind_name(),
        g.amplitude(),
        g.phase().to_degrees()
    )?;
    writeln!(out, "{m}")?;
    writeln!(out, "class: {:?}", c.class)?;
    writeln!(
        out,
        "eigenvalues of Xi^H Xi: {:.6}, {:.6}",
        c.eigenvalues[0], c.eigenvalues[1]
    )?;
    Ok(())
}

fn pattern<O: Write>(a: &PatternArgs, path: Option<&Path>, out: &mut O) -> CliResult<()> {
    let g = a.gain.resolve()?;
    let geom = ArrayGeometry::new(a.rows, a.cols, a.spacing)?;
    let opts = PatternOptions {
        user_distance: a.user_distance,
    };
    let kinds = [
        ConfigKind::ActiveCoupled,
        ConfigKind::ActiveIndependent,
        ConfigKind::PassiveLossless,
    ];
    let patterns = kinds
        .iter()
        .map(|k| radiation_pattern(&geom, &k.element_config(g), (a.theta_a, a.theta_b), opts))
        .collect::<crate::Result<Vec<RadiationPattern>>>()?;
    let scale = if a.raw {
        1.0
    } else {
        patterns.iter().map(RadiationPattern::max).fold(0.0, f64::max)
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["angle_deg", "side", "coupled", "independent", "passive"])?;
    for side in ["reflection", "transmission"] {
        let pick = |p: &RadiationPattern| {
            if side == "reflection" {
                p.reflection.clone()
            } else {
                p.transmission.clone()
            }
        };
        let cols: Vec<_> = patterns.iter().map(pick).collect();
        for (i, angle) in cols[0].angles_deg.iter().enumerate() {
            let mut row = vec![format!("{angle:?}"), side.to_string()];
            row.extend(cols.iter().map(|c| format!("{:?}", c.magnitude[i] / scale)));
            w.write_record(&row)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| e.to_string())?;
    match path {
        Some(p) => fs::write(p, bytes)?,
        None => out.write_all(&bytes)?,
    }
    Ok(())
}
