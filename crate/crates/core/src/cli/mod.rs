//! Command-line front end: `dcrm <command> --config <path> --out <dir>`.
//!
//! Exit codes: 0 when every verdict passes, 1 when a verdict fails, 2 for
//! configuration errors and 3 for runtime errors. On codes 2 and 3 nothing
//! is left in the output directory by this run.

pub mod config;
pub mod output;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::concentration::{concentration_experiment_with, reduction_experiment_with};
use crate::error::DcrmError;
use crate::flows::{advance_ut, apply_regime, estimate_lipschitz_with, hamiltonian_residual, integrate_utau, LipschitzOptions};
use crate::model::ModelSpec;
use crate::observables::{sample_member, Ensemble};
use crate::wep::wep_experiment_with;

pub use config::{parse_config, parse_config_str, ConfigError, LoadedConfig, RunConfig, Syntax};
pub use output::{csv_bytes, emit_csv, CsvTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    Concentration,
    Reduction,
    Wep,
    Lipschitz,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Concentration => "concentration",
            Command::Reduction => "reduction",
            Command::Wep => "wep",
            Command::Lipschitz => "lipschitz",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dcrm", version, about = "Deterministic Cartan-Randers model simulator")]
pub struct Args {
    #[arg(value_enum)]
    pub command: Command,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, env = "DCRM_THREADS", value_parser = clap::value_parser!(u16).range(1..))]
    pub threads: Option<u16>,
}

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Runtime(e) => write!(f, "runtime error: {e}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<DcrmError> for CliError {
    fn from(e: DcrmError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Everything a command produces, before anything touches the disk.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub files: Vec<(String, Vec<u8>)>,
    pub verdicts: BTreeMap<String, bool>,
    pub results: Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: Command,
    pub seed: u64,
    pub config: RunConfig,
    pub artifact_version: String,
    pub started: String,
    pub finished: String,
    pub verdicts: BTreeMap<String, bool>,
}

/// SHA-256 of the canonical JSON of the resolved configuration.
pub fn run_id(config: &RunConfig) -> String {
    let canonical = serde_json::to_vec(config).expect("configuration serialises");
    hex::encode(Sha256::digest(&canonical))
}

fn check(ok: bool, loaded: &LoadedConfig, key: &str, message: impl Into<String>) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(loaded.error_at(key, message)))
    }
}

fn positive(x: f64) -> bool {
    x > 0.0 && x.is_finite()
}

/// Checks the section of the selected command.
pub fn validate_section(command: Command, loaded: &LoadedConfig) -> Result<(), CliError> {
    let c = &loaded.config;
    let n = c.n_factors as usize;
    match command {
        Command::Simulate => {
            let s = &c.simulate;
            check(positive(s.dt), loaded, "simulate.dt", "dt must be positive")?;
            check(positive(s.dtau), loaded, "simulate.dtau", "dtau must be positive")?;
            check(s.tau_end >= 0.0 && s.tau_end.is_finite(), loaded, "simulate.tau_end", "tau_end must be nonnegative")?;
        }
        Command::Concentration => {
            let s = &c.concentration;
            check(s.count >= 1000, loaded, "concentration.count", "count must be at least 1000")?;
            check(s.grid_points >= 1, loaded, "concentration.grid_points", "grid_points must be at least 1")?;
            check(positive(s.grid_max_sigmas), loaded, "concentration.grid_max_sigmas", "grid_max_sigmas must be positive")?;
            check(positive(s.tail_prefactor), loaded, "concentration.tail_prefactor", "tail_prefactor must be positive")?;
            check(positive(s.exponent_coefficient), loaded, "concentration.exponent_coefficient", "must be positive")?;
            check(positive(s.dt), loaded, "concentration.dt", "dt must be positive")?;
            s.observable.validate().map_err(|e| loaded.error_at("concentration.observable", e.to_string()))?;
            check_factor(&s.observable, n, loaded, "concentration.observable")?;
        }
        Command::Reduction => {
            let s = &c.reduction;
            check(s.count >= 2, loaded, "reduction.count", "count must be at least 2")?;
            check(positive(s.dt), loaded, "reduction.dt", "dt must be positive")?;
            s.observable.validate().map_err(|e| loaded.error_at("reduction.observable", e.to_string()))?;
            check_factor(&s.observable, n, loaded, "reduction.observable")?;
        }
        Command::Wep => {
            let s = &c.wep;
            let (n_a, n_b) = s.split(n);
            check(n_a >= 1 && n_b >= 1 && n_a + n_b == n, loaded, "wep.n_a", format!("n_a + n_b must equal n_factors = {n} with both at least 1, got {n_a} + {n_b}"))?;
            let grid = s.grid();
            let key = if s.tau_grid.is_some() { "wep.tau_grid" } else { "wep.tau_points" };
            check(!grid.is_empty(), loaded, key, "tau grid is empty")?;
            check(grid.iter().all(|t| t.is_finite()) && grid.windows(2).all(|w| w[0] < w[1]), loaded, key, "tau grid must be strictly increasing")?;
            check(s.count >= 2, loaded, "wep.count", "count must be at least 2")?;
            check(positive(s.dt), loaded, "wep.dt", "dt must be positive")?;
            s.h.validate().map_err(|e| loaded.error_at("wep.h", e.to_string()))?;
        }
        Command::Lipschitz => {
            let s = &c.lipschitz;
            check(s.pairs >= 1, loaded, "lipschitz.pairs", "pairs must be at least 1")?;
            check(positive(s.dt), loaded, "lipschitz.dt", "dt must be positive")?;
            check(s.tolerance >= 0.0, loaded, "lipschitz.tolerance", "tolerance must be nonnegative")?;
            match s.map {
                config::LipschitzMap::Schedule => {}
                config::LipschitzMap::Regime { duration, .. } => {
                    check(duration >= 0.0 && duration.is_finite(), loaded, "lipschitz.map", "duration must be nonnegative")?
                }
                config::LipschitzMap::Utau { duration, dtau } => {
                    check(duration >= 0.0 && duration.is_finite(), loaded, "lipschitz.map", "duration must be nonnegative")?;
                    check(positive(dtau), loaded, "lipschitz.map", "dtau must be positive")?;
                }
            }
        }
    }
    Ok(())
}

fn check_factor(obs: &crate::observables::DiagonalObservable, n: usize, loaded: &LoadedConfig, key: &str) -> Result<(), CliError> {
    if let crate::observables::Aggregator::SingleFactor { factor } = obs.aggregator {
        check(factor < n, loaded, key, format!("factor {factor} is out of range for {n} factors"))?;
    }
    Ok(())
}

/// Runs the experiment in memory.
pub fn execute(command: Command, config: &RunConfig) -> Result<Artifacts, CliError> {
    let spec: ModelSpec = config.spec();
    spec.validate()?;
    let mut verdicts = BTreeMap::new();
    let (files, results) = match command {
        Command::Simulate => {
            let s = &config.simulate;
            let member = sample_member(&spec.measure, spec.n_factors, spec.seed, s.member);
            let settled = advance_ut(&member, &spec, s.dt)?;
            let traj = integrate_utau(&settled, &spec, s.tau_end, s.dtau)?;
            let one = Ensemble { members: vec![settled], measure: spec.measure.clone(), seed: spec.seed };
            let residual = hamiltonian_residual(&one, &spec)?;
            let finite = traj.samples.iter().all(|(_, st)| st.u.iter().chain(&st.p).all(|v| v.is_finite()));
            verdicts.insert("simulate".into(), finite);
            let results = json!({ "samples": traj.samples.len(), "hamiltonian_residual": residual, "finite": finite });
            (vec![("trajectory.csv".to_string(), csv_bytes(&traj)?)], results)
        }
        Command::Concentration => {
            let s = &config.concentration;
            let r = concentration_experiment_with(&spec, &s.observable, s.count, &s.settings())?;
            verdicts.insert("concentration".into(), r.verdict);
            let results = json!({
                "sigma_f": r.sigma_f,
                "m_f": r.m_f,
                "fitted_exponent": r.fitted_exponent,
                "fit_r_squared": r.fit_r_squared,
                "violations": r.violations,
                "scaled_bound_log": r.scaled_bound_log,
                "complexity_bound_log": r.complexity_bound_log,
                "count": r.count,
                "n_factors": r.n_factors,
            });
            (vec![("concentration.csv".to_string(), csv_bytes(&r)?)], results)
        }
        Command::Reduction => {
            let s = &config.reduction;
            let r = reduction_experiment_with(&spec, &s.observable, s.count, s.dt)?;
            verdicts.insert("reduction".into(), r.verdict);
            let results = serde_json::to_value(&r).map_err(|e| CliError::Runtime(e.to_string()))?;
            (vec![("reduction.csv".to_string(), csv_bytes(&r)?)], results)
        }
        Command::Wep => {
            let s = &config.wep;
            let (n_a, n_b) = s.split(spec.n_factors);
            let settings = crate::wep::WepSettings { dt: s.dt, ..Default::default() };
            let r = wep_experiment_with(&spec, n_a, n_b, &s.h, &s.grid(), s.count, &settings)?;
            verdicts.insert("wep".into(), r.verdict);
            let results = json!({
                "eotvos": r.eotvos,
                "eotvos_stderr": r.eotvos_stderr,
                "max_z": r.max_z,
                "deviation_std": r.deviation_std,
                "tail_exponent": r.tail_exponent,
                "tail_prefactor_log": r.tail_prefactor_log,
                "precision_bound_log": r.precision_bound_log,
                "n_a": r.n_a,
                "n_b": r.n_b,
                "count": r.count,
            });
            (vec![("wep.csv".to_string(), csv_bytes(&r)?)], results)
        }
        Command::Lipschitz => {
            let s = &config.lipschitz;
            let options = LipschitzOptions {
                pairs: s.pairs,
                seed: s.seed.unwrap_or(spec.seed),
                refine_steps: s.refine_steps,
                tolerance: s.tolerance,
            };
            let cert = match &s.map {
                config::LipschitzMap::Schedule => {
                    estimate_lipschitz_with(|x| advance_ut(x, &spec, s.dt), &spec.measure, spec.n_factors, &options)?
                }
                config::LipschitzMap::Regime { regime, duration } => estimate_lipschitz_with(
                    |x| apply_regime(*regime, x, &spec.schedule, *duration),
                    &spec.measure,
                    spec.n_factors,
                    &options,
                )?,
                config::LipschitzMap::Utau { duration, dtau } => estimate_lipschitz_with(
                    |x| integrate_utau(x, &spec, *duration, *dtau).map(|t| t.last().clone()),
                    &spec.measure,
                    spec.n_factors,
                    &options,
                )?,
            };
            verdicts.insert("lipschitz".into(), cert.passed);
            let results = json!({ "estimate": cert.estimate, "pairs_tested": cert.pairs_tested, "passed": cert.passed });
            (vec![("lipschitz.csv".to_string(), csv_bytes(&cert)?)], results)
        }
    };
    Ok(Artifacts { files, verdicts, results })
}

fn write_all(out_dir: &Path, files: &[(String, Vec<u8>)], written: &mut Vec<PathBuf>) -> std::io::Result<()> {
    std::fs::create_dir_all(out_dir)?;
    for (name, bytes) in files {
        let path = out_dir.join(name);
        written.push(path.clone());
        std::fs::write(&path, bytes)?;
    }
    Ok(())
}

/// Runs `command` and writes its CSV, `summary.json` and `manifest.json`
/// into `out_dir`. Returns the exit code.
pub fn run(command: Command, loaded: &LoadedConfig, out_dir: &Path) -> Result<u8, CliError> {
    let started = chrono::Utc::now().to_rfc3339();
    validate_section(command, loaded)?;
    let config = &loaded.config;
    let artifacts = execute(command, config)?;
    let id = run_id(config);
    let pass = artifacts.verdicts.values().all(|v| *v);

    let summary = json!({
        "command": command.name(),
        "run_id": id,
        "verdicts": artifacts.verdicts,
        "pass": pass,
        "results": artifacts.results,
    });
    let manifest = RunManifest {
        run_id: id,
        command,
        seed: config.seed,
        config: config.clone(),
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        started,
        finished: chrono::Utc::now().to_rfc3339(),
        verdicts: artifacts.verdicts.clone(),
    };
    let mut files = artifacts.files;
    files.push(("summary.json".into(), pretty_json(&summary)?));
    files.push(("manifest.json".into(), pretty_json(&manifest)?));

    let mut written = Vec::new();
    if let Err(e) = write_all(out_dir, &files, &mut written) {
        for p in &written {
            let _ = std::fs::remove_file(p);
        }
        return Err(e.into());
    }
    Ok(if pass { 0 } else { 1 })
}

fn pretty_json<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut v = serde_json::to_vec_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    v.push(b'\n');
    Ok(v)
}

fn run_args(args: &Args) -> Result<u8, CliError> {
    let mut loaded = parse_config(&args.config)?;
    if let Some(seed) = args.seed {
        loaded.config = loaded.config.with_seed(seed);
    }
    match args.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build()
            .map_err(|e| CliError::Runtime(e.to_string()))?
            .install(|| run(args.command, &loaded, &args.out)),
        None => run(args.command, &loaded, &args.out),
    }
}

/// Parses `args` (program name first), runs, reports errors on stderr and
/// returns the exit code.
pub fn main_with<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run_args(&args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

/// Entry point of the `dcrm` binary.
pub fn main_entry() -> ExitCode {
    ExitCode::from(main_with(std::env::args_os()))
}

#[cfg(test)]
mod tests;
