//! Command-line front end: argument parsing, mode dispatch, output files
//! and the run manifest. Every file is written atomically.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::analytic::series_run;
use crate::config::{Mode, RunConfig};
use crate::error::{Error, Result};
use crate::fsio::write_atomic;
use crate::metrics::{report, EchoReport};
use crate::scan::{
    calibrate_scenario_tau_i, run_scenario, scan_dynamical_xi, scan_k_xi, scan_m, sha256_hex, ScanResult, ScenarioId,
};
use crate::solver::{convergence_study_with_levels, simulate_chain_detailed, Grid};
use crate::trace::{fmt_f64, FieldTrace};

/// Above this |ρ| the weak-excitation treatment is questionable.
const COHERENCE_WARNING: f64 = 0.1;

#[derive(Debug, Parser)]
#[command(name = "nfc-echo", version, about = "Gamma-ray echo simulation for nuclear frequency comb absorber chains")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory (default: `out`).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Override a configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Static comb through the analytic Fourier series.
    Analytic,
    /// Numerical propagation through the comb.
    Simulate,
    /// Efficiency/fidelity map over (k, ξ).
    ScanKxi,
    /// Optimal efficiency versus the number of targets.
    ScanM,
    /// Dynamical Doppler comb versus ξ̄.
    ScanDyn,
    /// Named preset.
    Scenario { id: String },
    /// Grid refinement study.
    Convergence,
}

impl Command {
    fn mode(&self) -> Mode {
        match self {
            Self::Analytic => Mode::Analytic,
            Self::Simulate => Mode::Simulate,
            Self::ScanKxi => Mode::ScanKxi,
            Self::ScanM => Mode::ScanM,
            Self::ScanDyn => Mode::ScanDyn,
            Self::Scenario { .. } => Mode::Scenario,
            Self::Convergence => Mode::Convergence,
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidParameter { .. } | Error::Config(_) | Error::Unknown { .. } | Error::UnsupportedComb(_) => 2,
        Error::GridTooCoarse(_) => 3,
        Error::NoEcho(_) => 4,
        Error::Io(_) => 5,
        Error::NotConverged { .. } => 6,
        Error::NonFinite(_) => 7,
        Error::ZeroEnergy(_) | Error::IncompatibleTraces(_) => 1,
    }
}

pub fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::InvalidParameter { .. } => "invalid_parameter",
        Error::Config(_) => "config",
        Error::Unknown { .. } => "unknown_name",
        Error::UnsupportedComb(_) => "unsupported_comb",
        Error::GridTooCoarse(_) => "grid_too_coarse",
        Error::NoEcho(_) => "no_echo",
        Error::Io(_) => "io",
        Error::NotConverged { .. } => "not_converged",
        Error::NonFinite(_) => "non_finite",
        Error::ZeroEnergy(_) => "zero_energy",
        Error::IncompatibleTraces(_) => "incompatible_traces",
    }
}

/// Files and stdout lines produced by a run, before anything is written.
#[derive(Debug, Default)]
struct Outcome {
    files: Vec<(String, Vec<u8>)>,
    stdout: Vec<String>,
    warnings: Vec<String>,
    grid: Option<GridRecord>,
    extra: BTreeMap<String, toml::Value>,
}

impl Outcome {
    fn file(&mut self, name: impl Into<String>, body: String) {
        self.files.push((name.into(), body.into_bytes()));
    }

    fn trace(&mut self, name: impl Into<String>, trace: &FieldTrace<f64>) {
        self.file(name, trace.to_csv_string());
    }

    fn report(&mut self, rep: &EchoReport<f64>) {
        self.file("report.toml", rep.to_toml());
        self.file("report.csv", format!("{}\n{}\n", EchoReport::<f64>::csv_header(), rep.to_csv_row()));
        self.stdout.push(ef_line(rep.efficiency, rep.fidelity));
    }
}

fn ef_line(e: f64, f: f64) -> String {
    format!("E={} F={}", fmt_f64(e), fmt_f64(f))
}

#[derive(Debug, Clone, Copy, Serialize)]
struct GridRecord {
    t_start_ns: f64,
    t_end_ns: f64,
    dt_ns: f64,
    nz: usize,
    n_t: usize,
}

impl From<&Grid<f64>> for GridRecord {
    fn from(g: &Grid<f64>) -> Self {
        Self {
            t_start_ns: g.t0,
            t_end_ns: g.t1,
            dt_ns: g.dt,
            nz: g.nz,
            n_t: g.n_t(),
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    mode: &'static str,
    config_sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    threads: Option<usize>,
    warnings: &'a [String],
    config: &'a RunConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid: Option<GridRecord>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    results: &'a BTreeMap<String, toml::Value>,
    outputs: BTreeMap<String, String>,
}

/// Merges the config file, overrides and subcommand into one validated
/// configuration with the mode's defaults filled in.
pub fn load_config(cli: &Cli) -> Result<RunConfig> {
    merged_config(cli)?.resolved()
}

fn merged_config(cli: &Cli) -> Result<RunConfig> {
    let text = match &cli.config {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?,
        None => String::new(),
    };
    let mut cfg = RunConfig::parse(&text, &cli.set)?;
    let mode = cli.command.mode();
    if let Some(m) = cfg.mode.filter(|m| *m != mode) {
        return Err(Error::Config(format!(
            "config mode `{}` conflicts with subcommand `{}`",
            m.name(),
            mode.name()
        )));
    }
    cfg.mode = Some(mode);
    if let Command::Scenario { id } = &cli.command {
        let id: ScenarioId = id.parse()?;
        if let Some(other) = cfg.scenario.as_deref().filter(|s| *s != id.name()) {
            return Err(Error::Config(format!("config scenario `{other}` conflicts with `{id}`")));
        }
        cfg.scenario = Some(id.name().to_owned());
    }
    Ok(cfg)
}

fn output_dir(cli: &Cli, cfg: Option<&RunConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.out.clone()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Calibrates τ_i for a dynamical scenario comb when none is configured.
fn settle_scenario_tau_i(cfg: &mut RunConfig, out: &mut Outcome) -> Result<()> {
    if let (Some(name), None) = (cfg.scenario.clone(), cfg.tau_i) {
        let id: ScenarioId = name.parse()?;
        let tau_i = calibrate_scenario_tau_i(id, &cfg.scenario_params()?, &cfg.constants())?;
        cfg.tau_i = Some(tau_i);
        out.extra.insert("tau_i_calibrated".into(), toml::Value::Boolean(true));
    }
    Ok(())
}

fn run_analytic(cfg: &RunConfig, out: &mut Outcome) -> Result<()> {
    let comb = cfg.build_comb()?;
    let pulse = cfg.pulse()?;
    let constants = cfg.constants();
    let run = series_run(&pulse, &comb, constants.gamma)?;
    let rep = report(&run.input, &run.output, &pulse, &comb, constants.gamma, &cfg.metric_options()?)?;
    out.extra.insert("series_half_period_ns".into(), toml::Value::Float(run.config.half_period));
    out.extra.insert("series_l_max".into(), toml::Value::Integer(run.config.l_max as i64));
    out.trace("input.csv", &run.input);
    out.trace("output.csv", &run.output);
    out.report(&rep);
    Ok(())
}

/// The equations are linear in the drive, so |ρ| only means something when
/// the amplitude was set explicitly.
fn run_simulate(cfg: &mut RunConfig, explicit_drive: bool, out: &mut Outcome) -> Result<()> {
    settle_scenario_tau_i(cfg, out)?;
    let comb = cfg.build_comb()?;
    let pulse = cfg.pulse()?;
    let constants = cfg.constants();
    let grid = cfg.grid(&comb, &pulse)?;
    let run = simulate_chain_detailed(&comb, &pulse, &grid, &constants)?;
    if explicit_drive && run.max_coherence > COHERENCE_WARNING {
        out.warnings.push(format!(
            "max |rho| = {} exceeds {COHERENCE_WARNING}; the weak-excitation treatment may not hold",
            fmt_f64(run.max_coherence)
        ));
    }
    out.grid = Some((&grid).into());
    out.extra.insert("max_coherence".into(), toml::Value::Float(run.max_coherence));
    let n = run.traces.len();
    for (i, tr) in run.traces.iter().enumerate().skip(1).take(n.saturating_sub(2)) {
        out.trace(format!("boundary_{i:02}.csv"), tr);
    }
    out.trace("input.csv", run.input());
    out.trace("output.csv", run.output());
    let rep = report(run.input(), run.output(), &pulse, &comb, constants.gamma, &cfg.metric_options()?)?;
    out.report(&rep);
    Ok(())
}

fn need<'a, V>(v: &'a Option<V>, field: &'static str) -> Result<&'a V> {
    v.as_ref().ok_or_else(|| Error::InvalidParameter {
        field,
        reason: "required for this mode".into(),
    })
}

fn scan_summary(out: &mut Outcome, scan: &ScanResult) {
    out.file(format!("{}.csv", scan.id), scan.to_csv());
    out.extra.insert(
        format!("{}_grid_sha256", scan.id),
        toml::Value::String(scan.provenance.grid_hash.clone()),
    );
    out.extra.insert(
        format!("{}_config_sha256", scan.id),
        toml::Value::String(scan.provenance.config_hash.clone()),
    );
    out.warnings.extend(scan.flags.iter().cloned());
}

/// Index of the largest efficiency (first on ties).
fn best_cell(scan: &ScanResult) -> Option<usize> {
    (0..scan.len()).fold(None, |best, i| match best {
        Some(b) if scan.efficiency[b] >= scan.efficiency[i] => Some(b),
        _ => Some(i),
    })
}

fn coords_label(scan: &ScanResult, i: usize) -> String {
    scan.axes
        .iter()
        .zip(scan.coords(i))
        .map(|(a, v)| format!("{}={}", a.name, fmt_f64(v)))
        .collect::<Vec<_>>()
        .join(" ")
}

fn run_scan_kxi(cfg: &RunConfig, out: &mut Outcome) -> Result<()> {
    let pulse = cfg.pulse()?;
    let scan = scan_k_xi(
        &pulse,
        *need(&cfg.spacing, "S")?,
        *need(&cfg.m, "M")?,
        need(&cfg.k_grid, "k_grid")?,
        need(&cfg.xi_grid, "xi_grid")?,
        &cfg.constants(),
        &cfg.metric_options()?,
        cfg.reference_points.unwrap_or(true),
    )?;
    scan_summary(out, &scan);
    if !scan.reference_points.is_empty() {
        out.file("reference_points.csv", scan.reference_points_csv());
    }
    if let Some(i) = best_cell(&scan) {
        out.stdout.push(format!("{} {}", coords_label(&scan, i), ef_line(scan.efficiency[i], scan.fidelity[i])));
    }
    Ok(())
}

fn run_scan_m(cfg: &RunConfig, out: &mut Outcome) -> Result<()> {
    let pulse = cfg.pulse()?;
    let scan = scan_m(
        &pulse,
        *need(&cfg.spacing, "S")?,
        cfg.k.unwrap_or(0.0),
        need(&cfg.m_list, "m_list")?,
        (*need(&cfg.xi_bar_min, "xi_bar_min")?, *need(&cfg.xi_bar_max, "xi_bar_max")?),
        *need(&cfg.xi_bar_step, "xi_bar_step")?,
        &cfg.constants(),
        &cfg.metric_options()?,
    )?;
    scan_summary(out, &scan);
    for i in 0..scan.len() {
        out.stdout.push(format!(
            "{} xi_bar={} {}",
            coords_label(&scan, i),
            fmt_f64(scan.extra[0].values[i]),
            ef_line(scan.efficiency[i], scan.fidelity[i])
        ));
    }
    Ok(())
}

fn run_scan_dyn(cfg: &mut RunConfig, out: &mut Outcome) -> Result<()> {
    let constants = cfg.constants();
    let xs = cfg.xi_bar_values()?;
    let mut params = cfg.scenario_params()?;
    if params.tau_i.is_none() {
        let tau_i = calibrate_scenario_tau_i(ScenarioId::Fig3eDoppler6, &params, &constants)?;
        params.tau_i = Some(tau_i);
        cfg.tau_i = Some(tau_i);
        out.extra.insert("tau_i_calibrated".into(), toml::Value::Boolean(true));
    }
    let variants: &[bool] = match cfg.outer_pair {
        Some(true) => &[true],
        Some(false) => &[false],
        None => &[true, false],
    };
    for &outer in variants {
        let scan = scan_dynamical_xi(&xs, outer, &params, &constants)?;
        scan_summary(out, &scan);
        if let Some(i) = best_cell(&scan) {
            out.stdout.push(format!(
                "{} {} {}",
                scan.id,
                coords_label(&scan, i),
                ef_line(scan.efficiency[i], scan.fidelity[i])
            ));
        }
    }
    Ok(())
}

fn run_named_scenario(cfg: &mut RunConfig, out: &mut Outcome) -> Result<()> {
    let id: ScenarioId = need(&cfg.scenario, "scenario")?.parse()?;
    let run = run_scenario(id, &cfg.scenario_params()?, &cfg.constants())?;
    if run.tau_i_calibrated {
        cfg.tau_i = run.tau_i;
        out.extra.insert("tau_i_calibrated".into(), toml::Value::Boolean(true));
    }
    if let [point] = run.points.as_slice() {
        if let Some(g) = &point.grid {
            out.grid = Some(g.into());
        }
        out.trace("input.csv", &point.traces[0]);
        out.trace("output.csv", &point.traces[point.traces.len() - 1]);
        out.report(&point.report);
        return Ok(());
    }
    let mut csv = format!("label,{}\n", EchoReport::<f64>::csv_header());
    let mut toml_text = String::new();
    for p in &run.points {
        out.trace(format!("{}_input.csv", p.label), &p.traces[0]);
        out.trace(format!("{}_output.csv", p.label), &p.traces[p.traces.len() - 1]);
        csv.push_str(&format!("{},{}\n", p.label, p.report.to_csv_row()));
        toml_text.push_str(&format!("[{}]\n{}\n", p.label, p.report.to_toml()));
        out.stdout.push(format!("{} {}", p.label, ef_line(p.report.efficiency, p.report.fidelity)));
    }
    out.file("report.csv", csv);
    out.file("report.toml", toml_text);
    Ok(())
}

fn run_convergence(cfg: &mut RunConfig, out: &mut Outcome) -> Result<()> {
    settle_scenario_tau_i(cfg, out)?;
    let comb = cfg.build_comb()?;
    let pulse = cfg.pulse()?;
    let constants = cfg.constants();
    let grid = cfg.grid(&comb, &pulse)?;
    let tol = cfg.convergence_tol.unwrap_or(crate::solver::CONVERGENCE_TOL);
    let levels = cfg.max_levels.unwrap_or(crate::solver::MAX_CONVERGENCE_LEVELS);
    let study = convergence_study_with_levels(&comb, &pulse, &grid, &constants, &cfg.metric_options()?, tol, levels, true)?;
    let mut csv = String::from("level,dt_ns,nz,efficiency,fidelity,change\n");
    for l in &study.levels {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            l.level,
            fmt_f64(l.dt),
            l.nz,
            fmt_f64(l.efficiency),
            fmt_f64(l.fidelity),
            l.change.map(fmt_f64).unwrap_or_default()
        ));
    }
    out.file("convergence.csv", csv);
    out.grid = Some((&study.converged_grid).into());
    out.extra.insert("converged_level".into(), toml::Value::Integer(study.converged_level as i64));
    let ratios: Vec<toml::Value> = study.richardson_ratios().into_iter().map(toml::Value::Float).collect();
    out.extra.insert("richardson_ratios".into(), toml::Value::Array(ratios));
    let lvl = &study.levels[study.converged_level];
    out.stdout.push(ef_line(lvl.efficiency, lvl.fidelity));
    Ok(())
}

fn execute(cfg: &mut RunConfig, explicit_drive: bool) -> Result<Outcome> {
    let mut out = Outcome::default();
    match cfg.mode()? {
        Mode::Analytic => run_analytic(cfg, &mut out)?,
        Mode::Simulate => run_simulate(cfg, explicit_drive, &mut out)?,
        Mode::ScanKxi => run_scan_kxi(cfg, &mut out)?,
        Mode::ScanM => run_scan_m(cfg, &mut out)?,
        Mode::ScanDyn => run_scan_dyn(cfg, &mut out)?,
        Mode::Scenario => run_named_scenario(cfg, &mut out)?,
        Mode::Convergence => run_convergence(cfg, &mut out)?,
    }
    Ok(out)
}

fn write_outputs(dir: &Path, cfg: &RunConfig, threads: Option<usize>, out: &Outcome) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut outputs = BTreeMap::new();
    for (name, body) in &out.files {
        write_atomic(&dir.join(name), body)?;
        outputs.insert(name.clone(), sha256_hex(body));
    }
    let manifest = Manifest {
        tool: "nfc-echo",
        version: env!("CARGO_PKG_VERSION"),
        mode: cfg.mode()?.name(),
        config_sha256: sha256_hex(cfg.to_toml().as_bytes()),
        threads,
        warnings: &out.warnings,
        config: cfg,
        grid: out.grid,
        results: &out.extra,
        outputs,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(format!("manifest: {e}")))?;
    write_atomic(&dir.join("manifest.toml"), text.as_bytes())?;
    Ok(())
}

fn error_record(err: &Error) -> String {
    let mut t = toml::Table::new();
    t.insert("kind".into(), toml::Value::String(error_kind(err).into()));
    t.insert("exit_code".into(), toml::Value::Integer(exit_code(err).into()));
    t.insert("message".into(), toml::Value::String(err.to_string()));
    toml::to_string(&t).unwrap_or_default()
}

fn run(cli: &Cli) -> (Result<Vec<String>>, PathBuf) {
    let merged = merged_config(cli);
    let explicit_drive = merged.as_ref().is_ok_and(|c| c.omega0.is_some());
    let cfg = merged.and_then(|c| c.resolved());
    let dir = output_dir(cli, cfg.as_ref().ok());
    let result = cfg.and_then(|mut cfg| {
        let pool = match cli.threads {
            Some(0) => return Err(Error::Config("--threads must be at least 1".into())),
            Some(n) => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
            ),
            None => None,
        };
        let outcome = match &pool {
            Some(p) => p.install(|| execute(&mut cfg, explicit_drive))?,
            None => execute(&mut cfg, explicit_drive)?,
        };
        for w in &outcome.warnings {
            eprintln!("warning: {w}");
        }
        write_outputs(&dir, &cfg, cli.threads, &outcome)?;
        Ok(outcome.stdout)
    });
    (result, dir)
}

/// Runs the tool on `args` and returns the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        (Ok(lines), _) => {
            for l in lines {
                println!("{l}");
            }
            0
        }
        (Err(err), dir) => {
            eprintln!("error[{}]: {err}", error_kind(&err));
            if std::fs::create_dir_all(&dir).is_ok() {
                let _ = write_atomic(&dir.join("error.toml"), error_record(&err).as_bytes());
            }
            exit_code(&err)
        }
    }
}
