//! Run configuration: TOML (or JSON, by `.json` extension) with documented
//! defaults and strict key checking.
//!
//! Only `n_factors` is required. Everything else falls back to:
//!
//! | key | default |
//! |-----|---------|
//! | `seed` | 0 |
//! | `t_horizon` | total duration of `schedule.cycles` |
//! | `length_scale` | 1.0 |
//! | `eta_weights` | sixteen ones |
//! | `beta` | squashed zero constant field |
//! | `schedule` | no cycles, all rates 1.0, anchor at the origin |
//! | `measure` | standard product Gaussian |
//!
//! plus one table per experiment (`simulate`, `concentration`, `reduction`,
//! `wep`, `lipschitz`) whose defaults are given by their `Default` impls.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::beta::BetaFieldSpec;
use crate::concentration::{Center, ConcentrationSettings};
use crate::model::{ModelSpec, Regime, RegimeSchedule, FACTOR_DIM};
use crate::observables::{Aggregator, BaseFunction, DiagonalObservable, MeasureSpec};
use crate::wep::HSpec;

/// A configuration problem, located at a key and line when possible.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: Option<String>,
    pub line: Option<usize>,
    pub message: String,
    pub suggestion: Option<String>,
}

impl ConfigError {
    fn new(message: impl Into<String>) -> Self {
        Self { key: None, line: None, message: message.into(), suggestion: None }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration error")?;
        if let Some(k) = &self.key {
            write!(f, " at key `{k}`")?;
        }
        if let Some(l) = self.line {
            write!(f, " (line {l})")?;
        }
        write!(f, ": {}", self.message)?;
        if let Some(s) = &self.suggestion {
            write!(f, "; did you mean `{s}`?")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

fn one() -> f64 {
    1.0
}

fn unit_eta() -> [f64; FACTOR_DIM] {
    [1.0; FACTOR_DIM]
}

fn default_observable() -> DiagonalObservable {
    DiagonalObservable::new(BaseFunction::Coordinate { index: 0 }, Aggregator::Mean)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    /// Ensemble index of the simulated member.
    pub member: u64,
    pub dt: f64,
    pub dtau: f64,
    pub tau_end: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { member: 0, dt: 0.01, dtau: 0.01, tau_end: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConcentrationConfig {
    pub count: usize,
    pub observable: DiagonalObservable,
    pub grid_points: usize,
    pub grid_max_sigmas: f64,
    pub center: Center,
    pub tail_prefactor: f64,
    pub exponent_coefficient: f64,
    pub dt: f64,
}

impl Default for ConcentrationConfig {
    fn default() -> Self {
        let s = ConcentrationSettings::default();
        Self {
            count: 10_000,
            observable: default_observable(),
            grid_points: s.grid_points,
            grid_max_sigmas: s.grid_max_sigmas,
            center: s.center,
            tail_prefactor: s.tail_prefactor,
            exponent_coefficient: s.exponent_coefficient,
            dt: s.dt,
        }
    }
}

impl ConcentrationConfig {
    pub fn settings(&self) -> ConcentrationSettings {
        ConcentrationSettings {
            grid_points: self.grid_points,
            grid_max_sigmas: self.grid_max_sigmas,
            center: self.center,
            tail_prefactor: self.tail_prefactor,
            exponent_coefficient: self.exponent_coefficient,
            dt: self.dt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReductionConfig {
    pub count: usize,
    pub observable: DiagonalObservable,
    pub dt: f64,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        Self { count: 10_000, observable: default_observable(), dt: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WepConfig {
    /// Defaults to `n_factors / 2`.
    pub n_a: Option<usize>,
    /// Defaults to `n_factors - n_a`.
    pub n_b: Option<usize>,
    pub h: HSpec,
    /// Explicit grid; otherwise `tau_points` evenly spaced points on `[0, tau_end]`.
    pub tau_grid: Option<Vec<f64>>,
    pub tau_end: f64,
    pub tau_points: usize,
    pub count: usize,
    pub dt: f64,
}

impl Default for WepConfig {
    fn default() -> Self {
        Self { n_a: None, n_b: None, h: HSpec::default(), tau_grid: None, tau_end: 1.0, tau_points: 11, count: 10_000, dt: 0.01 }
    }
}

impl WepConfig {
    pub fn split(&self, n_factors: usize) -> (usize, usize) {
        let n_a = self.n_a.unwrap_or(n_factors / 2);
        (n_a, self.n_b.unwrap_or(n_factors.saturating_sub(n_a)))
    }

    pub fn grid(&self) -> Vec<f64> {
        match &self.tau_grid {
            Some(g) => g.clone(),
            None if self.tau_points == 1 => vec![0.0],
            None => (0..self.tau_points).map(|i| self.tau_end * i as f64 / (self.tau_points - 1) as f64).collect(),
        }
    }
}

/// The map whose Lipschitz constant is certified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LipschitzMap {
    /// `U_t` over the whole schedule.
    Schedule,
    /// One regime map for `duration`.
    Regime { regime: Regime, duration: f64 },
    /// `U_tau` for `duration`.
    Utau {
        duration: f64,
        #[serde(default = "default_dtau")]
        dtau: f64,
    },
}

fn default_dtau() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LipschitzConfig {
    pub pairs: usize,
    pub map: LipschitzMap,
    pub refine_steps: usize,
    pub tolerance: f64,
    pub dt: f64,
    /// Defaults to the model seed.
    pub seed: Option<u64>,
}

impl Default for LipschitzConfig {
    fn default() -> Self {
        Self { pairs: 10_000, map: LipschitzMap::Schedule, refine_steps: 256, tolerance: 1e-9, dt: 0.01, seed: None }
    }
}

/// The resolved configuration; serialising it gives the snapshot hashed
/// into the run id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n_factors: i64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub t_horizon: Option<f64>,
    #[serde(default = "one")]
    pub length_scale: f64,
    #[serde(default = "unit_eta")]
    pub eta_weights: [f64; FACTOR_DIM],
    #[serde(default)]
    pub beta: BetaFieldSpec,
    #[serde(default)]
    pub schedule: RegimeSchedule,
    #[serde(default)]
    pub measure: MeasureSpec,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub concentration: ConcentrationConfig,
    #[serde(default)]
    pub reduction: ReductionConfig,
    #[serde(default)]
    pub wep: WepConfig,
    #[serde(default)]
    pub lipschitz: LipschitzConfig,
}

impl RunConfig {
    /// The model part; `t_horizon` must already be resolved.
    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            n_factors: self.n_factors.max(0) as usize,
            eta_weights: self.eta_weights,
            beta: self.beta.clone(),
            schedule: self.schedule.clone(),
            measure: self.measure.clone(),
            seed: self.seed,
            t_horizon: self.t_horizon.unwrap_or_else(|| self.schedule.total_duration()),
            length_scale: self.length_scale,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// A parsed configuration together with its source text, kept for locating
/// keys in later diagnostics.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub source: String,
}

impl LoadedConfig {
    /// An error about `key`, located in the source.
    pub fn error_at(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError { key: Some(key.to_string()), line: locate_key(&self.source, key), message: message.into(), suggestion: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Syntax {
    Toml,
    Json,
}

pub fn parse_config(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let source = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new(format!("cannot read {}: {e}", path.display())))?;
    let syntax = match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("json") => Syntax::Json,
        _ => Syntax::Toml,
    };
    parse_config_str(&source, syntax)
}

/// Parses, applies defaults and checks the model-level constraints.
pub fn parse_config_str(source: &str, syntax: Syntax) -> Result<LoadedConfig, ConfigError> {
    let parsed: Result<RunConfig, (String, Option<usize>)> = match syntax {
        Syntax::Toml => toml::from_str(source).map_err(|e| {
            let line = e.span().map(|s| line_of_offset(source, s.start));
            (e.message().to_string(), line)
        }),
        Syntax::Json => serde_json::from_str(source).map_err(|e| {
            let line = (e.line() > 0).then_some(e.line());
            (e.to_string(), line)
        }),
    };
    let mut config = parsed.map_err(|(message, line)| diagnose_parse_error(source, message, line))?;
    if config.t_horizon.is_none() {
        config.t_horizon = Some(config.schedule.total_duration());
    }
    let loaded = LoadedConfig { config, source: source.to_string() };
    validate_model(&loaded)?;
    Ok(loaded)
}

fn line_of_offset(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

fn backticked(message: &str) -> Vec<&str> {
    message.split('`').skip(1).step_by(2).collect()
}

/// Turns serde's unknown-field/variant messages into a located diagnostic
/// with the closest known name.
fn diagnose_parse_error(source: &str, message: String, line: Option<usize>) -> ConfigError {
    for marker in ["unknown field", "unknown variant"] {
        if let Some(pos) = message.find(marker) {
            let names = backticked(&message[pos..]);
            if let Some((&unknown, candidates)) = names.split_first() {
                let suggestion = closest(unknown, candidates).map(str::to_string);
                return ConfigError {
                    key: Some(unknown.to_string()),
                    line: locate_key(source, unknown).or(line),
                    message: format!("{marker} `{unknown}`"),
                    suggestion,
                };
            }
        }
    }
    if let Some(pos) = message.find("missing field") {
        if let Some(&key) = backticked(&message[pos..]).first() {
            return ConfigError { key: Some(key.to_string()), line, message: message.trim().to_string(), suggestion: None };
        }
    }
    ConfigError { key: None, line, message: message.trim().to_string(), suggestion: None }
}

/// The candidate within edit distance `max(2, len / 3)` of `name`, if any.
pub fn closest<'a>(name: &str, candidates: &[&'a str]) -> Option<&'a str> {
    let limit = (name.chars().count() / 3).max(2);
    candidates
        .iter()
        .map(|c| (strsim::levenshtein(name, c), *c))
        .filter(|(d, _)| *d <= limit)
        .min_by_key(|(d, _)| *d)
        .map(|(_, c)| c)
}

fn is_key_line(trimmed: &str, key: &str) -> bool {
    let rest = if let Some(r) = trimmed.strip_prefix(key) {
        r
    } else if let Some(r) = trimmed.strip_prefix('"').and_then(|t| t.strip_prefix(key)).and_then(|t| t.strip_prefix('"')) {
        r
    } else {
        return false;
    };
    let rest = rest.trim_start();
    rest.starts_with('=') || rest.starts_with(':') || rest.starts_with('.')
}

fn is_header_for(trimmed: &str, key: &str) -> bool {
    let Some(inner) = trimmed.strip_prefix('[') else { return false };
    let inner = inner.trim_start_matches('[');
    let name = inner.split(']').next().unwrap_or("").trim();
    name.rsplit('.').next() == Some(key)
}

/// 1-based line where the last segment of the dotted `key` is written,
/// preferring matches after the parent table's header.
pub fn locate_key(source: &str, key: &str) -> Option<usize> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let leaf = parts.pop()?;
    let start = match parts.last() {
        Some(parent) => locate_key(source, &parts.join(".")).or_else(|| locate_key(source, parent)).unwrap_or(1),
        None => 1,
    };
    let find_from = |from: usize| {
        source.lines().enumerate().skip(from - 1).find_map(|(i, l)| {
            let t = l.trim_start();
            let inline = l.contains(&format!("{leaf} =")) || l.contains(&format!("\"{leaf}\":"));
            (is_key_line(t, leaf) || is_header_for(t, leaf) || inline).then_some(i + 1)
        })
    };
    find_from(start).or_else(|| find_from(1))
}

fn positive(x: f64) -> bool {
    x > 0.0 && x.is_finite()
}

fn validate_model(loaded: &LoadedConfig) -> Result<(), ConfigError> {
    let c = &loaded.config;
    if c.n_factors < 1 {
        return Err(loaded.error_at("n_factors", format!("n_factors must be at least 1, got {}", c.n_factors)));
    }
    if let Some(i) = c.eta_weights.iter().position(|w| !positive(*w)) {
        return Err(loaded.error_at("eta_weights", format!("entry {i} must be positive, got {}", c.eta_weights[i])));
    }
    if !positive(c.length_scale) {
        return Err(loaded.error_at("length_scale", format!("length_scale must be positive, got {}", c.length_scale)));
    }
    let n = c.n_factors as usize;
    c.schedule.validate(n).map_err(|e| loaded.error_at("schedule", e.to_string()))?;
    let total = c.schedule.total_duration();
    let t = c.t_horizon.unwrap_or(total);
    if !(t >= 0.0) || !t.is_finite() || (total - t).abs() > 1e-12 * total.max(1.0) {
        return Err(loaded.error_at("t_horizon", format!("t_horizon {t} must equal the schedule duration {total}")));
    }
    c.beta.validate(n).map_err(|e| loaded.error_at("beta", e.to_string()))?;
    c.measure.validate().map_err(|e| loaded.error_at("measure", e.to_string()))?;
    Ok(())
}
