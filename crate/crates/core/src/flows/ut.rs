//! Internal-time dynamics.
//!
//! The schedule splits `[0, T]` into ergodic, concentration and expansion
//! intervals. Each regime has an exact flow map of its duration:
//!
//! * ergodic: in every `(x^mu, y^mu)` plane of a factor, a rotation by
//!   `dt * (omega + twist * (r_mu^2 + r_{mu+1}^2) / 2)`. Radii are invariant,
//!   so the map preserves volume and any measure that is isotropic in those
//!   planes; momenta are left alone.
//! * concentration: `u <- c + e^{-kappa dt} (u - c)` and `p <- e^{-kappa dt} p`,
//!   where `c` is the anchor or the projection of `u` onto the equilibrium
//!   surface.
//! * expansion: `u <- c + e^{kappa_e dt} (u - c)`, momenta unchanged.
//!
//! All three maps compose as one-parameter groups in `dt`.

use rayon::prelude::*;

use crate::beta::evaluate_beta;
use crate::error::{DcrmError, Result};
use crate::model::{self, broadcast_at, ContractionTarget, ModelSpec, PhaseState, Regime, RegimeSchedule, BLOCK, CONFIG_DIM};
use crate::observables::Ensemble;

fn ergodic_map(state: &mut PhaseState, schedule: &RegimeSchedule, dt: f64) {
    for block in state.u.chunks_exact_mut(CONFIG_DIM) {
        let mut r2 = [0.0; BLOCK];
        for (mu, r) in r2.iter_mut().enumerate() {
            *r = block[mu] * block[mu] + block[BLOCK + mu] * block[BLOCK + mu];
        }
        for mu in 0..BLOCK {
            let angle = dt * (schedule.ergodic_omega + schedule.ergodic_twist * 0.5 * (r2[mu] + r2[(mu + 1) % BLOCK]));
            let (sin, cos) = angle.sin_cos();
            let (x, y) = (block[mu], block[BLOCK + mu]);
            block[mu] = cos * x - sin * y;
            block[BLOCK + mu] = sin * x + cos * y;
        }
    }
}

/// `u <- c + factor (u - c)` relative to the schedule's target.
fn dilate_about_target(state: &mut PhaseState, target: &ContractionTarget, factor: f64) -> Result<()> {
    match target {
        ContractionTarget::Anchor { anchor } => {
            for (i, x) in state.u.iter_mut().enumerate() {
                let a = broadcast_at(anchor, i);
                *x = a + factor * (*x - a);
            }
        }
        ContractionTarget::Sigma { sphere_radius } => {
            for (k, block) in state.u.chunks_exact_mut(CONFIG_DIM).enumerate() {
                let mut proj = [0.0; CONFIG_DIM];
                proj.copy_from_slice(block);
                model::project_factor(&mut proj, *sphere_radius)
                    .ok_or(DcrmError::ProjectionUndefined { factor: k })?;
                for (x, c) in block.iter_mut().zip(&proj) {
                    *x = c + factor * (*x - c);
                }
            }
        }
    }
    Ok(())
}

/// Applies the flow map of `regime` for internal time `dt` without touching
/// the state's clocks.
pub fn apply_regime(regime: Regime, state: &PhaseState, schedule: &RegimeSchedule, dt: f64) -> Result<PhaseState> {
    let mut out = state.clone();
    match regime {
        Regime::Ergodic => ergodic_map(&mut out, schedule, dt),
        Regime::Concentration => {
            let factor = (-schedule.kappa * dt).exp();
            dilate_about_target(&mut out, &schedule.target, factor)?;
            out.p.iter_mut().for_each(|v| *v *= factor);
        }
        Regime::Expansion => {
            dilate_about_target(&mut out, &schedule.target, (schedule.kappa_expand * dt).exp())?;
        }
    }
    if out.u.iter().chain(&out.p).any(|v| !v.is_finite()) {
        return Err(DcrmError::NumericOverflow { context: "U_t regime map" });
    }
    Ok(out)
}

fn horizon_slack(horizon: f64) -> f64 {
    1e-12 * horizon.max(1.0)
}

/// Advances by `dt` with the regime active at `state.t`.
pub fn step_ut(state: &PhaseState, spec: &ModelSpec, dt: f64) -> Result<PhaseState> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(DcrmError::Input(format!("dt must be positive, got {dt}")));
    }
    let horizon = spec.t_horizon;
    if state.t + dt > horizon + horizon_slack(horizon) {
        return Err(DcrmError::ScheduleExhausted { t: state.t + dt, horizon });
    }
    let segment = spec
        .schedule
        .regime_at(state.t)
        .ok_or(DcrmError::ScheduleExhausted { t: state.t, horizon })?;
    let mut next = apply_regime(segment.regime, state, &spec.schedule, dt)?;
    next.t = state.t + dt;
    Ok(next)
}

/// Steps from `state.t` to the horizon, shortening steps so none crosses a
/// regime boundary.
pub fn advance_ut(state: &PhaseState, spec: &ModelSpec, dt: f64) -> Result<PhaseState> {
    advance_ut_until(state, spec, dt, spec.t_horizon)
}

/// Like [`advance_ut`] but stops at internal time `t_stop`.
pub fn advance_ut_until(state: &PhaseState, spec: &ModelSpec, dt: f64, t_stop: f64) -> Result<PhaseState> {
    if !(dt > 0.0) {
        return Err(DcrmError::Input(format!("dt must be positive, got {dt}")));
    }
    let horizon = spec.t_horizon;
    if t_stop > horizon + horizon_slack(horizon) {
        return Err(DcrmError::ScheduleExhausted { t: t_stop, horizon });
    }
    let mut current = state.clone();
    for segment in spec.schedule.segments() {
        let end = segment.end.min(t_stop);
        while current.t < end {
            let remaining = end - current.t;
            // swallow rounding-sized remainders into the current step
            let h = if remaining <= dt * (1.0 + 1e-9) { remaining } else { dt };
            let mut next = apply_regime(segment.regime, &current, &spec.schedule, h)?;
            next.t = if h == remaining { end } else { current.t + h };
            current = next;
        }
        if current.t >= t_stop {
            break;
        }
    }
    Ok(current)
}

/// Advances every member through the whole schedule. Output order equals
/// input order and does not depend on the thread count.
pub fn run_cycle(ensemble: &Ensemble, spec: &ModelSpec, dt: f64) -> Result<Ensemble> {
    if ensemble.members.iter().any(|m| m.t != 0.0) {
        return Err(DcrmError::Input("run_cycle expects every member at t = 0".into()));
    }
    let members = ensemble
        .members
        .par_iter()
        .map(|m| advance_ut(m, spec, dt))
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble { members, measure: ensemble.measure.clone(), seed: ensemble.seed })
}

/// Largest `|H|` over the ensemble, with the field evaluated at each
/// member's own times.
pub fn hamiltonian_residual(ensemble: &Ensemble, spec: &ModelSpec) -> Result<f64> {
    let values = ensemble
        .members
        .par_iter()
        .map(|m| {
            let beta = evaluate_beta(&spec.beta, m.t, m.tau, &m.u, &spec.eta_weights)?;
            Ok(model::randers_hamiltonian(&m.u, &m.p, &beta)?.abs())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(values.into_iter().fold(0.0, f64::max))
}
