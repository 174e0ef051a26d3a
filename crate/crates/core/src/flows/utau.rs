use crate::beta::beta_and_vjp;
use crate::error::{DcrmError, Result};
use crate::model::{ModelSpec, PhaseState};

/// States sampled on a uniform external-time grid; the last step may be
/// shorter so the final sample lands exactly on the requested end time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<(f64, PhaseState)>,
    pub step: f64,
}

impl Trajectory {
    pub fn last(&self) -> &PhaseState {
        &self.samples.last().expect("trajectory holds at least the initial state").1
    }
}

fn rhs(spec: &ModelSpec, t: f64, tau: f64, u: &[f64], p: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (beta, mut vjp) = beta_and_vjp(&spec.beta, t, tau, u, p, &spec.eta_weights)?;
    vjp.iter_mut().for_each(|v| *v = -*v);
    Ok((beta, vjp))
}

fn axpy(x: &[f64], a: f64, y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(x, y)| x + a * y).collect()
}

/// One classical RK4 step of length `dtau`; internal time is untouched.
pub fn step_utau(state: &PhaseState, spec: &ModelSpec, dtau: f64) -> Result<PhaseState> {
    if !(dtau > 0.0) || !dtau.is_finite() {
        return Err(DcrmError::Input(format!("dtau must be positive, got {dtau}")));
    }
    if state.u.len() != spec.dim() || state.p.len() != spec.dim() {
        return Err(DcrmError::Dimension { expected: spec.dim(), got: state.u.len() });
    }
    let (t, tau, h) = (state.t, state.tau, dtau);
    let (k1u, k1p) = rhs(spec, t, tau, &state.u, &state.p)?;
    let (k2u, k2p) = rhs(spec, t, tau + h / 2.0, &axpy(&state.u, h / 2.0, &k1u), &axpy(&state.p, h / 2.0, &k1p))?;
    let (k3u, k3p) = rhs(spec, t, tau + h / 2.0, &axpy(&state.u, h / 2.0, &k2u), &axpy(&state.p, h / 2.0, &k2p))?;
    let (k4u, k4p) = rhs(spec, t, tau + h, &axpy(&state.u, h, &k3u), &axpy(&state.p, h, &k3p))?;

    let combine = |x: &[f64], a: &[f64], b: &[f64], c: &[f64], d: &[f64]| -> Vec<f64> {
        (0..x.len()).map(|i| x[i] + h / 6.0 * (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i])).collect()
    };
    let next = PhaseState {
        u: combine(&state.u, &k1u, &k2u, &k3u, &k4u),
        p: combine(&state.p, &k1p, &k2p, &k3p, &k4p),
        t,
        tau: tau + h,
    };
    if next.u.iter().chain(&next.p).any(|v| !v.is_finite()) {
        return Err(DcrmError::NumericOverflow { context: "U_tau step" });
    }
    Ok(next)
}

/// Integrates from `state.tau` to `tau_end`, recording every step.
pub fn integrate_utau(state: &PhaseState, spec: &ModelSpec, tau_end: f64, dtau: f64) -> Result<Trajectory> {
    if !(dtau > 0.0) {
        return Err(DcrmError::Input(format!("dtau must be positive, got {dtau}")));
    }
    if !(tau_end > state.tau) {
        return Err(DcrmError::Input(format!("tau_end {tau_end} must exceed the start time {}", state.tau)));
    }
    let tau0 = state.tau;
    // a remainder below 1e-9 steps is rounding noise, not a real short step
    let n_steps = (((tau_end - tau0) / dtau) - 1e-9).ceil().max(1.0) as usize;
    let mut samples = Vec::with_capacity(n_steps + 1);
    samples.push((tau0, state.clone()));
    let mut current = state.clone();
    for i in 1..=n_steps {
        let target = if i == n_steps { tau_end } else { tau0 + i as f64 * dtau };
        let mut next = step_utau(&current, spec, target - current.tau)?;
        next.tau = target;
        samples.push((target, next.clone()));
        current = next;
    }
    Ok(Trajectory { samples, step: dtau })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beta::{BetaField, BetaFieldSpec, BetaMode};
    use crate::model::randers_hamiltonian;
    use crate::beta::evaluate_beta;

    fn spec_with(field: BetaField, mode: BetaMode, n: usize) -> ModelSpec {
        ModelSpec::new(n, 0).with_beta(BetaFieldSpec::new(field, mode))
    }

    fn rotation_generator() -> [[f64; 8]; 8] {
        let mut g = [[0.0; 8]; 8];
        let entries = [(0, 1, 0.7), (2, 5, -0.4), (3, 6, 1.1), (4, 7, 0.3), (1, 3, 0.2)];
        for (i, j, v) in entries {
            g[i][j] = v;
            g[j][i] = -v;
        }
        g
    }

    #[test]
    fn constant_field_translates() {
        let c: Vec<f64> = (0..8).map(|i| 0.05 * i as f64 - 0.1).collect();
        let spec = spec_with(BetaField::Constant { c: c.clone() }, BetaMode::Raw, 2);
        let mut s = PhaseState::zeros(2);
        s.u.iter_mut().enumerate().for_each(|(i, v)| *v = i as f64);
        s.p.iter_mut().enumerate().for_each(|(i, v)| *v = -(i as f64));
        let next = step_utau(&s, &spec, 0.1).unwrap();
        for i in 0..16 {
            assert!((next.u[i] - (s.u[i] + 0.1 * c[i % 8])).abs() < 1e-14);
        }
        assert_eq!(next.p, s.p);
        assert_eq!(next.t, s.t);
        assert!((next.tau - 0.1).abs() < 1e-16);
    }

    #[test]
    fn rotation_preserves_norm() {
        let spec = spec_with(BetaField::Rotational { generator: rotation_generator() }, BetaMode::Raw, 1);
        let mut s = PhaseState::zeros(1);
        s.u = vec![0.1, -0.2, 0.05, 0.3, 0.0, 0.1, -0.1, 0.2];
        let n0: f64 = s.u.iter().map(|v| v * v).sum::<f64>().sqrt();
        for h in [1e-2, 5e-3] {
            let next = step_utau(&s, &spec, h).unwrap();
            let n1: f64 = next.u.iter().map(|v| v * v).sum::<f64>().sqrt();
            // local error of RK4 on a rotation is (h|A|)^5/120 relative at worst
            assert!((n1 - n0).abs() < n0 * (h * 2.0f64).powi(5));
        }
    }

    #[test]
    fn contraction_matches_exponential_decay() {
        let anchor = vec![0.1, 0.2, -0.1, 0.0, 0.05, 0.0, 0.1, -0.2];
        let kappa = 0.8;
        let spec = spec_with(BetaField::Contraction { anchor: anchor.clone(), rate: kappa }, BetaMode::Raw, 1);
        let mut s = PhaseState::zeros(1);
        s.u = vec![0.3, 0.1, 0.2, -0.2, 0.1, 0.3, 0.0, 0.1];
        let traj = integrate_utau(&s, &spec, 1.0, 1e-3).unwrap();
        assert_eq!(traj.samples.len(), 1001);
        let end = traj.last();
        for i in 0..8 {
            let exact = anchor[i] + (-kappa * 1.0f64).exp() * (s.u[i] - anchor[i]);
            assert!((end.u[i] - exact).abs() < 1e-9);
        }
    }

    #[test]
    fn single_step_trajectory_and_exact_end() {
        let spec = spec_with(BetaField::Constant { c: vec![0.1; 8] }, BetaMode::Raw, 1);
        let s = PhaseState::zeros(1);
        let traj = integrate_utau(&s, &spec, 0.25, 0.25).unwrap();
        assert_eq!(traj.samples.len(), 2);
        let traj = integrate_utau(&s, &spec, 1.0, 0.3).unwrap();
        assert_eq!(traj.samples.len(), 5);
        assert_eq!(traj.samples.last().unwrap().0, 1.0);
        assert_eq!(traj.last().tau, 1.0);
        // straight line
        for (tau, st) in &traj.samples {
            for v in &st.u {
                assert!((v - 0.1 * tau).abs() < 1e-12);
            }
        }
        let taus: Vec<f64> = traj.samples.iter().map(|(t, _)| *t).collect();
        assert!(taus.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn energy_conserved_for_autonomous_field() {
        let spec = spec_with(BetaField::Rotational { generator: rotation_generator() }, BetaMode::Squashed, 2);
        let mut s = PhaseState::zeros(2);
        s.u.iter_mut().enumerate().for_each(|(i, v)| *v = ((i * 7) % 5) as f64 * 0.3 - 0.5);
        s.p.iter_mut().enumerate().for_each(|(i, v)| *v = ((i * 3) % 7) as f64 * 0.2 - 0.6);
        let h = |st: &PhaseState| {
            let b = evaluate_beta(&spec.beta, st.t, st.tau, &st.u, &spec.eta_weights).unwrap();
            randers_hamiltonian(&st.u, &st.p, &b).unwrap()
        };
        let traj = integrate_utau(&s, &spec, 1.0, 1e-3).unwrap();
        assert!((h(traj.last()) - h(&s)).abs() <= 1e-8);
    }

    #[test]
    fn raw_violation_propagates() {
        let spec = spec_with(BetaField::Constant { c: vec![1.0; 8] }, BetaMode::Raw, 1);
        assert!(matches!(
            step_utau(&PhaseState::zeros(1), &spec, 0.1),
            Err(DcrmError::ConstraintViolation { .. })
        ));
        assert!(step_utau(&PhaseState::zeros(1), &spec, 0.0).is_err());
    }
}
