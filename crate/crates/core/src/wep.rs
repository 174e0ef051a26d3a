//! Subsystems, center-of-mass free fall and the equivalence test between
//! two disjoint subsystems.
//!
//! Factor indices in a [`SubsystemSpec`] are 1-based. The position
//! coordinate `mu` (1..=4) of a factor is `x^{mu-1}`, the first block of its
//! configuration.

use std::num::NonZeroU64;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concentration::{empirical_tail, evolved_member, paper_bound_log};
use crate::error::{DcrmError, Result};
use crate::model::{ModelSpec, PhaseState, BLOCK, CONFIG_DIM, FACTOR_DIM};
use crate::stats;

pub const EPS_FLOOR: f64 = 1e-30;
/// Largest quadrature step used by [`com_trajectory`].
const MAX_TAU_STEP: f64 = 1e-3;
const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SystemName {
    A,
    B,
    S,
}

impl SystemName {
    pub fn as_str(self) -> &'static str {
        match self {
            SystemName::A => "A",
            SystemName::B => "B",
            SystemName::S => "S",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsystemSpec {
    pub name: SystemName,
    pub factor_indices: Vec<usize>,
}

impl SubsystemSpec {
    pub fn len(&self) -> usize {
        self.factor_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factor_indices.is_empty()
    }
}

pub fn partition_systems(n_factors: usize, n_a: usize, n_b: usize) -> Result<(SubsystemSpec, SubsystemSpec, SubsystemSpec)> {
    if n_a < 1 || n_b < 1 {
        return Err(DcrmError::Input(format!("both subsystems need a factor, got n_a = {n_a}, n_b = {n_b}")));
    }
    if n_a + n_b != n_factors {
        return Err(DcrmError::Input(format!("n_a + n_b = {} but n_factors = {n_factors}", n_a + n_b)));
    }
    Ok((
        SubsystemSpec { name: SystemName::A, factor_indices: (1..=n_a).collect() },
        SubsystemSpec { name: SystemName::B, factor_indices: (n_a + 1..=n_factors).collect() },
        SubsystemSpec { name: SystemName::S, factor_indices: (1..=n_factors).collect() },
    ))
}

/// Mean over the system's factors of position coordinate `mu`.
pub fn observable_coordinate(state: &PhaseState, system: &SubsystemSpec, mu: usize) -> Result<f64> {
    if !(1..=BLOCK).contains(&mu) {
        return Err(DcrmError::Input(format!("mu must be in 1..=4, got {mu}")));
    }
    if system.is_empty() {
        return Err(DcrmError::Input(format!("system {} is empty", system.name.as_str())));
    }
    let n = state.n_factors();
    let mut values = Vec::with_capacity(system.len());
    for &k in &system.factor_indices {
        if k < 1 || k > n {
            return Err(DcrmError::Input(format!("factor index {k} outside 1..={n}")));
        }
        values.push(state.u[(k - 1) * CONFIG_DIM + mu - 1]);
    }
    Ok(stats::mean(&values))
}

/// Center-of-mass velocity `h(tau)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HSpec {
    Constant { c: [f64; BLOCK] },
    /// `amplitude * sin(omega tau + phase)`.
    Sinusoidal { amplitude: [f64; BLOCK], omega: f64, phase: f64 },
    /// `values[j]` on the `j`-th interval cut by the increasing `breakpoints`.
    PiecewiseConstant { breakpoints: Vec<f64>, values: Vec<[f64; BLOCK]> },
}

impl Default for HSpec {
    fn default() -> Self {
        HSpec::Constant { c: [0.0; BLOCK] }
    }
}

impl HSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            HSpec::Constant { c } if !finite(c) => Err(DcrmError::Input("h: constant must be finite".into())),
            HSpec::Sinusoidal { amplitude, omega, phase } => {
                if !finite(amplitude) || !omega.is_finite() || !phase.is_finite() {
                    return Err(DcrmError::Input("h: sinusoid parameters must be finite".into()));
                }
                Ok(())
            }
            HSpec::PiecewiseConstant { breakpoints, values } => {
                if values.len() != breakpoints.len() + 1 {
                    return Err(DcrmError::Input(format!(
                        "h: {} breakpoints need {} values, got {}",
                        breakpoints.len(),
                        breakpoints.len() + 1,
                        values.len()
                    )));
                }
                if !finite(breakpoints) || breakpoints.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(DcrmError::Input("h: breakpoints must be finite and increasing".into()));
                }
                if !values.iter().all(|v| finite(v)) {
                    return Err(DcrmError::Input("h: values must be finite".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, tau: f64) -> [f64; BLOCK] {
        match self {
            HSpec::Constant { c } => *c,
            HSpec::Sinusoidal { amplitude, omega, phase } => {
                let s = (omega * tau + phase).sin();
                amplitude.map(|a| a * s)
            }
            HSpec::PiecewiseConstant { breakpoints, values } => values[breakpoints.partition_point(|&b| b <= tau)],
        }
    }

    fn breakpoints(&self) -> &[f64] {
        match self {
            HSpec::PiecewiseConstant { breakpoints, .. } => breakpoints,
            _ => &[],
        }
    }
}

/// `int_a^b h` by RK4 on `dM/dtau = h(tau)`, cutting at breakpoints so each
/// step sees a smooth integrand.
fn integrate_h(h: &HSpec, a: f64, b: f64) -> [f64; BLOCK] {
    let mut cuts = vec![a];
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let mut inner: Vec<f64> = h.breakpoints().iter().copied().filter(|&x| x > lo && x < hi).collect();
    if a > b {
        inner.reverse();
    }
    cuts.extend(inner);
    cuts.push(b);

    let mut acc = [0.0; BLOCK];
    for w in cuts.windows(2) {
        let (s, e) = (w[0], w[1]);
        // piecewise h is constant between cuts; sampling the midpoint keeps
        // a breakpoint from selecting the neighbouring piece
        let mid = 0.5 * (s + e);
        let f = |tau: f64| if matches!(h, HSpec::PiecewiseConstant { .. }) { h.eval(mid) } else { h.eval(tau) };
        let steps = ((e - s).abs() / MAX_TAU_STEP).ceil().max(1.0) as usize;
        let dtau = (e - s) / steps as f64;
        for j in 0..steps {
            let t0 = s + j as f64 * dtau;
            let t1 = if j + 1 == steps { e } else { t0 + dtau };
            let (k1, k2, k4) = (f(t0), f(t0 + 0.5 * dtau), f(t1));
            for mu in 0..BLOCK {
                acc[mu] += dtau / 6.0 * (k1[mu] + 4.0 * k2[mu] + k4[mu]);
            }
        }
    }
    acc
}

/// Reference trajectory `M(tau) = m0 + int_0^tau h` at each grid point; `m0`
/// is the value at `tau = 0`.
pub fn com_trajectory(m0: [f64; BLOCK], h: &HSpec, tau_grid: &[f64]) -> Result<Vec<[f64; BLOCK]>> {
    h.validate()?;
    check_grid(tau_grid)?;
    let mut out = Vec::with_capacity(tau_grid.len());
    let mut current = m0;
    let mut tau = 0.0;
    for &target in tau_grid {
        let d = integrate_h(h, tau, target);
        for mu in 0..BLOCK {
            current[mu] += d[mu];
        }
        tau = target;
        out.push(current);
    }
    Ok(out)
}

fn check_grid(tau_grid: &[f64]) -> Result<()> {
    if tau_grid.iter().any(|t| !t.is_finite()) || tau_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(DcrmError::Input("tau grid must be finite and strictly increasing".into()));
    }
    Ok(())
}

/// Translates every factor's position block by `shift` (free fall).
pub fn free_fall_shift(state: &mut PhaseState, shift: &[f64; BLOCK]) {
    for block in state.u.chunks_exact_mut(CONFIG_DIM) {
        for mu in 0..BLOCK {
            block[mu] += shift[mu];
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WepPoint {
    pub tau: f64,
    pub system: SystemName,
    /// 1..=4.
    pub mu: usize,
    pub x_mean: f64,
    pub x_std: f64,
    pub x_stderr: f64,
    pub m_ref: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WepReport {
    pub tau_grid: Vec<f64>,
    pub com_reference: Vec<[f64; BLOCK]>,
    /// Ordered by tau, then system (A, B, S), then mu.
    pub x_by_system: Vec<WepPoint>,
    pub eotvos: f64,
    /// Combined standard error normalised like `eotvos`, at the point where
    /// `eotvos` is attained.
    pub eotvos_stderr: f64,
    /// Largest `|X_A - X_B|` in combined standard errors over all points.
    pub max_z: f64,
    /// Per system (A, B, S): standard deviation of `X^mu` pooled over mu.
    pub deviation_std: [f64; 3],
    /// `C2` and `ln C1` of `ln P(|X(S) - M| > rho) = ln C1 - C2 rho^2 / (2 L^2)`.
    pub tail_exponent: Option<f64>,
    pub tail_prefactor_log: Option<f64>,
    pub precision_bound_log: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub count: usize,
    pub verdict: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WepSettings {
    pub dt: f64,
    pub tail_grid_points: usize,
    pub tail_grid_max_sigmas: f64,
    pub max_z: f64,
}

impl Default for WepSettings {
    fn default() -> Self {
        Self { dt: 0.01, tail_grid_points: 40, tail_grid_max_sigmas: 4.0, max_z: 5.0 }
    }
}

/// Position mean at `t = T` of the state sitting at the measure mean,
/// averaged over factors.
fn reference_start(spec: &ModelSpec, dt: f64) -> Result<[f64; BLOCK]> {
    let n = spec.n_factors;
    let mut mean_state = PhaseState::zeros(n);
    for k in 0..n {
        for i in 0..FACTOR_DIM {
            let v = spec.measure.mean[i];
            if i < CONFIG_DIM {
                mean_state.u[k * CONFIG_DIM + i] = v;
            } else {
                mean_state.p[k * CONFIG_DIM + i - CONFIG_DIM] = v;
            }
        }
    }
    let end = if spec.t_horizon > 0.0 {
        crate::flows::advance_ut_until(&mean_state, spec, dt, spec.t_horizon)?
    } else {
        mean_state
    };
    let mut m0 = [0.0; BLOCK];
    for (mu, m) in m0.iter_mut().enumerate() {
        let v: Vec<f64> = (0..n).map(|k| end.u[k * CONFIG_DIM + mu]).collect();
        *m = stats::mean(&v);
    }
    Ok(m0)
}

pub fn wep_experiment(spec: &ModelSpec, n_a: usize, n_b: usize, h: &HSpec, tau_grid: &[f64], count: usize) -> Result<WepReport> {
    wep_experiment_with(spec, n_a, n_b, h, tau_grid, count, &WepSettings::default())
}

/// Samples `count` members, runs `U_t` to the horizon, then lets every
/// factor fall freely along `h` and records the observable coordinates of
/// A, B and S at each grid point.
pub fn wep_experiment_with(
    spec: &ModelSpec,
    n_a: usize,
    n_b: usize,
    h: &HSpec,
    tau_grid: &[f64],
    count: usize,
    settings: &WepSettings,
) -> Result<WepReport> {
    let (a, b, s) = partition_systems(spec.n_factors, n_a, n_b)?;
    run_systems(spec, [a, b, s], h, tau_grid, count, settings)
}

/// The experiment on explicit systems, ordered (A, B, S).
pub(crate) fn run_systems(
    spec: &ModelSpec,
    systems: [SubsystemSpec; 3],
    h: &HSpec,
    tau_grid: &[f64],
    count: usize,
    settings: &WepSettings,
) -> Result<WepReport> {
    spec.validate()?;
    h.validate()?;
    if tau_grid.is_empty() {
        return Err(DcrmError::Input("tau grid is empty".into()));
    }
    if count < 2 {
        return Err(DcrmError::Input(format!("wep experiment needs at least 2 members, got {count}")));
    }
    let (n_a, n_b) = (systems[0].len(), systems[1].len());
    let m0 = reference_start(spec, settings.dt)?;
    let reference = com_trajectory(m0, h, tau_grid)?;
    let g = tau_grid.len();
    let slots = g * 3 * BLOCK;
    let slot = |ti: usize, si: usize, mu: usize| (ti * 3 + si) * BLOCK + mu;

    // per chunk: sums of (X - M) and (X - M)^2 per slot, plus the final S deviations
    let chunks: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..count.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut s1 = vec![0.0; slots];
            let mut s2 = vec![0.0; slots];
            let mut tail = Vec::new();
            for i in c * CHUNK..((c + 1) * CHUNK).min(count) {
                let mut state = evolved_member(spec, i as u64, settings.dt, spec.t_horizon)?;
                let mut at = m0;
                for (ti, m) in reference.iter().enumerate() {
                    let shift: [f64; BLOCK] = std::array::from_fn(|mu| m[mu] - at[mu]);
                    free_fall_shift(&mut state, &shift);
                    state.tau = tau_grid[ti];
                    at = *m;
                    for (si, sys) in systems.iter().enumerate() {
                        for mu in 0..BLOCK {
                            let d = observable_coordinate(&state, sys, mu + 1)? - m[mu];
                            s1[slot(ti, si, mu)] += d;
                            s2[slot(ti, si, mu)] += d * d;
                            if ti + 1 == g && si == 2 {
                                tail.push(d);
                            }
                        }
                    }
                }
            }
            Ok((s1, s2, tail))
        })
        .collect::<Result<_>>()?;

    let mut s1 = vec![0.0; slots];
    let mut s2 = vec![0.0; slots];
    let mut deviations = Vec::with_capacity(count * BLOCK);
    for (c1, c2, t) in chunks {
        s1.iter_mut().zip(&c1).for_each(|(a, b)| *a += b);
        s2.iter_mut().zip(&c2).for_each(|(a, b)| *a += b);
        deviations.extend(t);
    }

    let nf = count as f64;
    let mut points = Vec::with_capacity(slots);
    for (ti, &tau) in tau_grid.iter().enumerate() {
        for (si, sys) in systems.iter().enumerate() {
            for mu in 0..BLOCK {
                let k = slot(ti, si, mu);
                let md = s1[k] / nf;
                let var = ((s2[k] - s1[k] * md) / (nf - 1.0)).max(0.0);
                let std = var.sqrt();
                points.push(WepPoint {
                    tau,
                    system: sys.name,
                    mu: mu + 1,
                    x_mean: reference[ti][mu] + md,
                    x_std: std,
                    x_stderr: std / nf.sqrt(),
                    m_ref: reference[ti][mu],
                });
            }
        }
    }

    let mut eotvos = 0.0f64;
    let mut eotvos_stderr = 0.0;
    let mut max_z = 0.0f64;
    for ti in 0..g {
        for mu in 0..BLOCK {
            let pa = &points[slot(ti, 0, mu)];
            let pb = &points[slot(ti, 1, mu)];
            let diff = (pa.x_mean - pb.x_mean).abs();
            let se = pa.x_stderr.hypot(pb.x_stderr);
            let denom = pa.x_mean.abs() + pb.x_mean.abs() + EPS_FLOOR;
            let e = 2.0 * diff / denom;
            if e > eotvos {
                eotvos = e;
                eotvos_stderr = 2.0 * se / denom;
            }
            let z = if se > 0.0 { diff / se } else if diff > 0.0 { f64::INFINITY } else { 0.0 };
            max_z = max_z.max(z);
        }
    }

    let mut deviation_std = [0.0; 3];
    for (si, d) in deviation_std.iter_mut().enumerate() {
        let vars: Vec<f64> = (0..BLOCK).map(|mu| points[slot(g - 1, si, mu)].x_std.powi(2)).collect();
        *d = stats::mean(&vars).sqrt();
    }

    let (tail_exponent, tail_prefactor_log) = fit_deviation_tail(&deviations, deviation_std[2], spec.length_scale, settings)?;
    let n = NonZeroU64::new(spec.n_factors as u64).expect("validated n_factors");

    Ok(WepReport {
        tau_grid: tau_grid.to_vec(),
        com_reference: reference,
        x_by_system: points,
        eotvos,
        eotvos_stderr,
        max_z,
        deviation_std,
        tail_exponent,
        tail_prefactor_log,
        precision_bound_log: paper_bound_log(n),
        n_a,
        n_b,
        count,
        verdict: max_z <= settings.max_z,
    })
}

fn fit_deviation_tail(deviations: &[f64], sigma: f64, length: f64, settings: &WepSettings) -> Result<(Option<f64>, Option<f64>)> {
    if !(sigma > 0.0) || settings.tail_grid_points == 0 {
        return Ok((None, None));
    }
    let grid: Vec<f64> = (1..=settings.tail_grid_points)
        .map(|i| settings.tail_grid_max_sigmas * sigma * i as f64 / settings.tail_grid_points as f64)
        .collect();
    let est = empirical_tail(deviations, 0.0, &grid)?;
    let (x, y): (Vec<f64>, Vec<f64>) = grid
        .iter()
        .zip(&est.tail)
        .filter(|(_, &p)| p > 0.0)
        .map(|(r, p)| (r * r / (2.0 * length * length), p.ln()))
        .unzip();
    if x.len() < 2 {
        return Ok((None, None));
    }
    let (intercept, slope, _) = stats::linear_fit(&x, &y);
    Ok((Some(-slope), Some(intercept)))
}
