//! Empirical concentration of lifted observables.
//!
//! Everything bound-related is kept in natural-log space: the `N`-scaled
//! bound `exp(-32 N^2)` is below the smallest subnormal double from `N = 5`.

use std::num::NonZeroU64;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DcrmError, Result};
use crate::flows::ut::advance_ut_until;
use crate::model::{ModelSpec, PhaseState, Regime};
use crate::observables::{lift_diagonal, sample_member, DiagonalObservable};
use crate::stats;

/// Confidence level of the Dvoretzky-Kiefer-Wolfowitz band.
pub const DKW_ALPHA: f64 = 0.05;
/// Default coefficient of the `N`-scaled bound exponent.
pub const DEFAULT_EXPONENT_COEFFICIENT: f64 = 32.0;
/// Default prefactor of the Gaussian tail bound.
pub const DEFAULT_TAIL_PREFACTOR: f64 = 0.5;

/// Half-width of the 95% DKW band for `count` samples.
pub fn dkw_margin(count: usize) -> f64 {
    ((2.0 / DKW_ALPHA).ln() / (2.0 * count as f64)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailEstimate {
    pub tail: Vec<f64>,
    pub dkw_margin: Vec<f64>,
}

fn check_grid(rho_grid: &[f64]) -> Result<()> {
    if rho_grid.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
        return Err(DcrmError::Input("rho grid must be positive and finite".into()));
    }
    if rho_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(DcrmError::Input("rho grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Fraction of `values` with `|v - center| > rho` for every grid point.
pub fn empirical_tail(values: &[f64], center: f64, rho_grid: &[f64]) -> Result<TailEstimate> {
    if values.is_empty() {
        return Err(DcrmError::Input("no values to estimate a tail from".into()));
    }
    check_grid(rho_grid)?;
    let mut dev: Vec<f64> = values.iter().map(|v| (v - center).abs()).collect();
    dev.sort_by(|a, b| a.total_cmp(b));
    let n = dev.len() as f64;
    let tail = rho_grid
        .iter()
        .map(|rho| (dev.len() - dev.partition_point(|d| d <= rho)) as f64 / n)
        .collect();
    Ok(TailEstimate { tail, dkw_margin: vec![dkw_margin(values.len()); rho_grid.len()] })
}

/// `ln(1/2) - rho^2 / (2 sigma_f^2)`.
pub fn gaussian_bound_log(rho: f64, sigma_f: f64) -> Result<f64> {
    gaussian_bound_log_with(rho, sigma_f, DEFAULT_TAIL_PREFACTOR)
}

/// `ln(prefactor) - rho^2 / (2 sigma_f^2)`.
pub fn gaussian_bound_log_with(rho: f64, sigma_f: f64, prefactor: f64) -> Result<f64> {
    if !(sigma_f > 0.0) || !sigma_f.is_finite() {
        return Err(DcrmError::Input(format!("sigma_f must be positive, got {sigma_f}")));
    }
    if !(prefactor > 0.0) {
        return Err(DcrmError::Input(format!("tail prefactor must be positive, got {prefactor}")));
    }
    Ok(prefactor.ln() - rho * rho / (2.0 * sigma_f * sigma_f))
}

/// `ln(1/2) - 32 n^2`.
pub fn paper_bound_log(n: NonZeroU64) -> f64 {
    scaled_bound_log(n, DEFAULT_EXPONENT_COEFFICIENT)
}

/// `ln(1/2) - coefficient * n^2`.
pub fn scaled_bound_log(n: NonZeroU64, coefficient: f64) -> f64 {
    let n = n.get() as f64;
    0.5f64.ln() - coefficient * n * n
}

/// The bound obtained by substituting `rho^2 / rho_P^2 = n^2` into the
/// Gaussian bound: `ln(1/2) - n^2 / 2`. Reported next to the scaled bound.
pub fn complexity_bound_log(n: NonZeroU64) -> f64 {
    let n = n.get() as f64;
    0.5f64.ln() - 0.5 * n * n
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub c: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Least squares of `ln(tail) = ln(1/2) - c rho^2` over the grid points
/// whose tail lies strictly inside `(0, 1)`.
pub fn fit_concentration_exponent(rho_grid: &[f64], tail: &[f64]) -> Result<ExponentFit> {
    if rho_grid.len() != tail.len() {
        return Err(DcrmError::Dimension { expected: rho_grid.len(), got: tail.len() });
    }
    let (x, y): (Vec<f64>, Vec<f64>) = rho_grid
        .iter()
        .zip(tail)
        .filter(|(_, t)| **t > 0.0 && **t < 1.0)
        .map(|(r, t)| (r * r, t.ln()))
        .unzip();
    if x.len() < 3 {
        return Err(DcrmError::FitDegenerate { measurable: x.len() });
    }
    let ln_half = 0.5f64.ln();
    let sxz: f64 = x.iter().zip(&y).map(|(a, b)| a * (ln_half - b)).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let c = sxz / sxx;
    let r_squared = stats::r_squared(&y, x.iter().map(|a| ln_half - c * a));
    Ok(ExponentFit { c, r_squared, points: x.len() })
}

/// Where the concentration centre `M_f` sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Center {
    #[default]
    Mean,
    Median,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConcentrationSettings {
    /// Number of points in the rho grid.
    pub grid_points: usize,
    /// The grid spans `(0, grid_max_sigmas * sigma_f]`.
    pub grid_max_sigmas: f64,
    pub center: Center,
    pub tail_prefactor: f64,
    pub exponent_coefficient: f64,
    /// Internal-time step for the `U_t` run.
    pub dt: f64,
}

impl Default for ConcentrationSettings {
    fn default() -> Self {
        Self {
            grid_points: 40,
            grid_max_sigmas: 4.0,
            center: Center::Mean,
            tail_prefactor: DEFAULT_TAIL_PREFACTOR,
            exponent_coefficient: DEFAULT_EXPONENT_COEFFICIENT,
            dt: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationReport {
    pub rho_grid: Vec<f64>,
    pub empirical_tail: Vec<f64>,
    pub dkw_margin: Vec<f64>,
    pub bound_log: Vec<f64>,
    /// `None` when fewer than three grid points are measurable.
    pub fitted_exponent: Option<f64>,
    pub fit_r_squared: Option<f64>,
    pub sigma_f: f64,
    pub m_f: f64,
    pub count: usize,
    pub n_factors: usize,
    /// `ln(1/2) - coefficient * N^2`.
    pub scaled_bound_log: f64,
    /// `ln(1/2) - N^2 / 2`.
    pub complexity_bound_log: f64,
    /// Every grid point satisfies `tail <= bound + margin`.
    pub verdict: bool,
    /// Grid points where the domination check fails.
    pub violations: usize,
}

/// Builds a report from already-evaluated observable values.
pub fn report_from_values(values: &[f64], n_factors: usize, settings: &ConcentrationSettings) -> Result<ConcentrationReport> {
    if values.len() < 2 {
        return Err(DcrmError::Input("at least two values are needed".into()));
    }
    let n = NonZeroU64::new(n_factors as u64).ok_or_else(|| DcrmError::Input("n_factors must be positive".into()))?;
    let sigma_f = stats::sample_std(values).unwrap_or(0.0);
    if !(sigma_f > 0.0) {
        return Err(DcrmError::DegenerateInput("observable has zero dispersion".into()));
    }
    let m_f = match settings.center {
        Center::Mean => stats::mean(values),
        Center::Median => stats::median(values),
    };
    let rho_grid: Vec<f64> = (1..=settings.grid_points)
        .map(|i| settings.grid_max_sigmas * sigma_f * i as f64 / settings.grid_points as f64)
        .collect();
    let tails = empirical_tail(values, m_f, &rho_grid)?;
    let bound_log = rho_grid
        .iter()
        .map(|r| gaussian_bound_log_with(*r, sigma_f, settings.tail_prefactor))
        .collect::<Result<Vec<f64>>>()?;
    let fit = fit_concentration_exponent(&rho_grid, &tails.tail).ok();
    let violations = tails
        .tail
        .iter()
        .zip(&bound_log)
        .zip(&tails.dkw_margin)
        .filter(|((t, b), m)| **t > b.exp() + **m)
        .count();
    Ok(ConcentrationReport {
        rho_grid,
        empirical_tail: tails.tail,
        dkw_margin: tails.dkw_margin,
        bound_log,
        fitted_exponent: fit.map(|f| f.c),
        fit_r_squared: fit.map(|f| f.r_squared),
        sigma_f,
        m_f,
        count: values.len(),
        n_factors,
        scaled_bound_log: scaled_bound_log(n, settings.exponent_coefficient),
        complexity_bound_log: complexity_bound_log(n),
        verdict: violations == 0,
        violations,
    })
}

/// Member `i` of the ensemble keyed by the model seed, run through `U_t`
/// until `t_stop`.
pub(crate) fn evolved_member(spec: &ModelSpec, index: u64, dt: f64, t_stop: f64) -> Result<PhaseState> {
    let m = sample_member(&spec.measure, spec.n_factors, spec.seed, index);
    if t_stop > 0.0 {
        advance_ut_until(&m, spec, dt, t_stop)
    } else {
        Ok(m)
    }
}

pub fn concentration_experiment(spec: &ModelSpec, obs: &DiagonalObservable, count: usize) -> Result<ConcentrationReport> {
    concentration_experiment_with(spec, obs, count, &ConcentrationSettings::default())
}

/// Samples `count` members, runs `U_t` to the horizon and measures the
/// concentration of the lifted observable.
pub fn concentration_experiment_with(
    spec: &ModelSpec,
    obs: &DiagonalObservable,
    count: usize,
    settings: &ConcentrationSettings,
) -> Result<ConcentrationReport> {
    if count < 1000 {
        return Err(DcrmError::Input(format!("concentration experiment needs at least 1000 members, got {count}")));
    }
    spec.validate()?;
    obs.validate()?;
    let values = (0..count as u64)
        .into_par_iter()
        .map(|i| lift_diagonal(obs, &evolved_member(spec, i, settings.dt, spec.t_horizon)?))
        .collect::<Result<Vec<f64>>>()?;
    report_from_values(&values, spec.n_factors, settings)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReductionReport {
    pub dispersion_before: f64,
    pub dispersion_after: f64,
    pub contraction_ratio: f64,
    /// Standard error of the ratio from the two sample standard deviations.
    pub ratio_stderr: f64,
    pub predicted_ratio: f64,
    pub window_start: f64,
    pub window_end: f64,
    pub verdict: bool,
}

/// Dispersion of the lifted observable across the first concentration
/// interval of the schedule. Without one, the window is the whole schedule
/// and the predicted ratio is 1.
pub fn reduction_experiment(spec: &ModelSpec, obs: &DiagonalObservable, count: usize) -> Result<ReductionReport> {
    reduction_experiment_with(spec, obs, count, 0.01)
}

pub fn reduction_experiment_with(spec: &ModelSpec, obs: &DiagonalObservable, count: usize, dt: f64) -> Result<ReductionReport> {
    if count < 2 {
        return Err(DcrmError::Input("reduction experiment needs at least two members".into()));
    }
    spec.validate()?;
    obs.validate()?;
    let window = spec.schedule.segments().into_iter().find(|s| s.regime == Regime::Concentration);
    let (start, end, predicted) = match window {
        Some(seg) => (seg.start, seg.end, (-spec.schedule.kappa * (seg.end - seg.start)).exp()),
        None => (0.0, spec.t_horizon, 1.0),
    };
    let pairs = (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let before = evolved_member(spec, i, dt, start)?;
            let after = if end > start { advance_ut_until(&before, spec, dt, end)? } else { before.clone() };
            Ok((lift_diagonal(obs, &before)?, lift_diagonal(obs, &after)?))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let (before, after): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let dispersion_before = stats::sample_std(&before).unwrap_or(0.0);
    if !(dispersion_before > 0.0) {
        return Err(DcrmError::DegenerateInput("zero dispersion at the start of the window".into()));
    }
    let dispersion_after = stats::sample_std(&after).unwrap_or(0.0);
    let ratio = dispersion_after / dispersion_before;
    let rel = 1.0 / (2.0 * (count - 1) as f64);
    Ok(ReductionReport {
        dispersion_before,
        dispersion_after,
        contraction_ratio: ratio,
        ratio_stderr: ratio * (2.0 * rel).sqrt(),
        predicted_ratio: predicted,
        window_start: start,
        window_end: end,
        verdict: ratio <= predicted * 1.1,
    })
}
