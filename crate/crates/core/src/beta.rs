//! Drift-field catalog.
//!
//! A field assigns to every configuration `u` (and both times) the vector
//! `beta(t, tau, u)` that drives `du/dtau` and enters the Hamiltonian
//! `H = beta . p`. Every catalog variant acts factor by factor with the same
//! rule on each 8-block, so permuting factors commutes with evaluation.
//!
//! Fields are evaluated in one of two modes. `Raw` returns the field as is
//! and rejects values with `|beta|_eta >= 1`. `Squashed` rescales
//! `beta -> beta * tanh(n) / n` with `n = |beta|_eta`, which keeps the norm
//! strictly below one for any input.
//!
//! Alongside the value, [`beta_and_vjp`] returns `J^T p` where
//! `J = d beta / d u`; this is the right-hand side of the momentum equation
//! `dp/dtau = -J^T p` and is computed analytically for every variant.

use serde::{Deserialize, Serialize};

use crate::error::{DcrmError, Result};
use crate::model::{self, broadcast_at, check_broadcast, CONFIG_DIM, FACTOR_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaMode {
    Raw,
    #[default]
    Squashed,
}

/// Time-dependent weight of a blended component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightSchedule {
    Constant { value: f64 },
    /// Linear in internal time between `(t0, w0)` and `(t1, w1)`, clamped
    /// outside.
    LinearT { t0: f64, w0: f64, t1: f64, w1: f64 },
    /// `offset + amplitude * sin(omega * tau + phase)`.
    SinusoidalTau { offset: f64, amplitude: f64, omega: f64, phase: f64 },
}

impl WeightSchedule {
    pub fn at(&self, t: f64, tau: f64) -> f64 {
        match *self {
            WeightSchedule::Constant { value } => value,
            WeightSchedule::LinearT { t0, w0, t1, w1 } => {
                if t1 <= t0 || t <= t0 {
                    w0
                } else if t >= t1 {
                    w1
                } else {
                    w0 + (w1 - w0) * (t - t0) / (t1 - t0)
                }
            }
            WeightSchedule::SinusoidalTau { offset, amplitude, omega, phase } => {
                offset + amplitude * (omega * tau + phase).sin()
            }
        }
    }

    fn depends_on_tau(&self) -> bool {
        matches!(self, WeightSchedule::SinusoidalTau { amplitude, omega, .. } if *amplitude != 0.0 && *omega != 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlendComponent {
    pub weight: WeightSchedule,
    pub field: BetaField,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BetaField {
    /// `beta = c`; `c` has length 8 (repeated per factor) or `8N`.
    Constant { c: Vec<f64> },
    /// `beta_k = G u_k` with an antisymmetric 8x8 generator `G`.
    Rotational { generator: [[f64; 8]; 8] },
    /// `beta = -rate (u - anchor)`.
    Contraction { anchor: Vec<f64>, rate: f64 },
    /// `beta = -rate (u - P(u))` where `P` projects onto the equilibrium
    /// surface whose 3-sphere has radius `tube_radius`.
    SigmaContraction { rate: f64, tube_radius: f64 },
    Blended { components: Vec<BlendComponent> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaFieldSpec {
    #[serde(default)]
    pub mode: BetaMode,
    pub field: BetaField,
}

impl Default for BetaFieldSpec {
    fn default() -> Self {
        Self { mode: BetaMode::Squashed, field: BetaField::Constant { c: vec![0.0; CONFIG_DIM] } }
    }
}

impl BetaFieldSpec {
    pub fn new(field: BetaField, mode: BetaMode) -> Self {
        Self { mode, field }
    }

    pub fn validate(&self, n_factors: usize) -> Result<()> {
        self.field.validate(n_factors)
    }

    /// True when the field does not depend on external time.
    pub fn is_autonomous(&self) -> bool {
        !self.field.depends_on_tau()
    }
}

impl BetaField {
    pub fn validate(&self, n_factors: usize) -> Result<()> {
        match self {
            BetaField::Constant { c } => check_broadcast(c, n_factors, "constant field c"),
            BetaField::Rotational { generator } => {
                let scale = generator.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
                for i in 0..CONFIG_DIM {
                    for j in 0..CONFIG_DIM {
                        if (generator[i][j] + generator[j][i]).abs() > 4.0 * f64::EPSILON * scale {
                            return Err(DcrmError::Input(format!(
                                "rotational generator is not antisymmetric at ({i}, {j})"
                            )));
                        }
                    }
                }
                Ok(())
            }
            BetaField::Contraction { anchor, rate } => {
                check_broadcast(anchor, n_factors, "contraction anchor")?;
                positive(*rate, "contraction rate")
            }
            BetaField::SigmaContraction { rate, tube_radius } => {
                positive(*rate, "sigma contraction rate")?;
                positive(*tube_radius, "tube_radius")
            }
            BetaField::Blended { components } => {
                components.iter().try_for_each(|c| c.field.validate(n_factors))
            }
        }
    }

    fn depends_on_tau(&self) -> bool {
        match self {
            BetaField::Blended { components } => components
                .iter()
                .any(|c| c.weight.depends_on_tau() || c.field.depends_on_tau()),
            _ => false,
        }
    }

    /// `out += weight * beta_raw(u)`.
    fn accumulate(&self, t: f64, tau: f64, u: &[f64], weight: f64, out: &mut [f64]) -> Result<()> {
        match self {
            BetaField::Constant { c } => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o += weight * broadcast_at(c, i);
                }
            }
            BetaField::Rotational { generator } => {
                for (ub, ob) in u.chunks_exact(CONFIG_DIM).zip(out.chunks_exact_mut(CONFIG_DIM)) {
                    for (row, o) in generator.iter().zip(ob.iter_mut()) {
                        *o += weight * row.iter().zip(ub).map(|(g, x)| g * x).sum::<f64>();
                    }
                }
            }
            BetaField::Contraction { anchor, rate } => {
                for (i, (o, x)) in out.iter_mut().zip(u).enumerate() {
                    *o -= weight * rate * (x - broadcast_at(anchor, i));
                }
            }
            BetaField::SigmaContraction { rate, tube_radius } => {
                for (k, (ub, ob)) in u.chunks_exact(CONFIG_DIM).zip(out.chunks_exact_mut(CONFIG_DIM)).enumerate() {
                    let mut proj = [0.0; CONFIG_DIM];
                    proj.copy_from_slice(ub);
                    model::project_factor(&mut proj, *tube_radius)
                        .ok_or(DcrmError::ProjectionUndefined { factor: k })?;
                    for ((o, x), q) in ob.iter_mut().zip(ub).zip(&proj) {
                        *o -= weight * rate * (x - q);
                    }
                }
            }
            BetaField::Blended { components } => {
                for c in components {
                    let w = c.weight.at(t, tau);
                    if w != 0.0 {
                        c.field.accumulate(t, tau, u, weight * w, out)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// `out += weight * J_raw(u)^T w`.
    fn accumulate_vjp(&self, t: f64, tau: f64, u: &[f64], w: &[f64], weight: f64, out: &mut [f64]) -> Result<()> {
        match self {
            BetaField::Constant { .. } => {}
            BetaField::Rotational { generator } => {
                for (wb, ob) in w.chunks_exact(CONFIG_DIM).zip(out.chunks_exact_mut(CONFIG_DIM)) {
                    for (j, o) in ob.iter_mut().enumerate() {
                        *o += weight * (0..CONFIG_DIM).map(|i| generator[i][j] * wb[i]).sum::<f64>();
                    }
                }
            }
            BetaField::Contraction { rate, .. } => {
                for (o, x) in out.iter_mut().zip(w) {
                    *o -= weight * rate * x;
                }
            }
            BetaField::SigmaContraction { rate, tube_radius } => {
                let blocks = u.chunks_exact(CONFIG_DIM).zip(w.chunks_exact(CONFIG_DIM));
                for (k, ((ub, wb), ob)) in blocks.zip(out.chunks_exact_mut(CONFIG_DIM)).enumerate() {
                    let jp = model::project_factor_jacobian(ub, *tube_radius)
                        .ok_or(DcrmError::ProjectionUndefined { factor: k })?;
                    for (j, o) in ob.iter_mut().enumerate() {
                        let jpt_w: f64 = (0..CONFIG_DIM).map(|i| jp[i][j] * wb[i]).sum();
                        *o -= weight * rate * (wb[j] - jpt_w);
                    }
                }
            }
            BetaField::Blended { components } => {
                for c in components {
                    let cw = c.weight.at(t, tau);
                    if cw != 0.0 {
                        c.field.accumulate_vjp(t, tau, u, w, weight * cw, out)?;
                    }
                }
            }
        }
        Ok(())
    }
}

fn positive(v: f64, what: &str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(DcrmError::Input(format!("{what} must be positive, got {v}")))
    }
}

fn check_config_len(u: &[f64]) -> Result<()> {
    if u.is_empty() || u.len() % CONFIG_DIM != 0 {
        return Err(DcrmError::Dimension { expected: CONFIG_DIM * u.len().div_ceil(CONFIG_DIM).max(1), got: u.len() });
    }
    Ok(())
}

/// Largest value the squashed norm may take; `tanh` rounds to exactly one
/// for arguments above ~19.
const SQUASH_CEILING: f64 = 1.0 - 4.0 * f64::EPSILON;

/// Scale `s(n) = tanh(n)/n` and `s'(n)/n`, with the series near zero.
fn squash_coefficients(n: f64) -> (f64, f64) {
    if n < 1e-4 {
        let n2 = n * n;
        (1.0 - n2 / 3.0, -2.0 / 3.0 + 8.0 * n2 / 15.0)
    } else {
        let th = n.tanh().min(SQUASH_CEILING);
        let sech2 = {
            let c = n.cosh();
            1.0 / (c * c)
        };
        (th / n, (n * sech2 - th) / (n * n * n))
    }
}

fn raw_beta(spec: &BetaFieldSpec, t: f64, tau: f64, u: &[f64]) -> Result<Vec<f64>> {
    check_config_len(u)?;
    let mut beta = vec![0.0; u.len()];
    spec.field.accumulate(t, tau, u, 1.0, &mut beta)?;
    Ok(beta)
}

/// `beta(t, tau, u)` in the mode of `spec`.
pub fn evaluate_beta(
    spec: &BetaFieldSpec,
    t: f64,
    tau: f64,
    u: &[f64],
    eta_weights: &[f64; FACTOR_DIM],
) -> Result<Vec<f64>> {
    let mut beta = raw_beta(spec, t, tau, u)?;
    let n = model::eta_norm_sq(eta_weights, &beta).sqrt();
    if !n.is_finite() {
        return Err(DcrmError::NumericOverflow { context: "drift field" });
    }
    match spec.mode {
        BetaMode::Raw => {
            if n >= 1.0 {
                return Err(DcrmError::ConstraintViolation { norm: n });
            }
        }
        BetaMode::Squashed => {
            let (s, _) = squash_coefficients(n);
            beta.iter_mut().for_each(|b| *b *= s);
        }
    }
    Ok(beta)
}

/// Returns `(beta, J^T p)` where `J` is the Jacobian of the (possibly
/// squashed) field with respect to `u`.
pub fn beta_and_vjp(
    spec: &BetaFieldSpec,
    t: f64,
    tau: f64,
    u: &[f64],
    p: &[f64],
    eta_weights: &[f64; FACTOR_DIM],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if p.len() != u.len() {
        return Err(DcrmError::Dimension { expected: u.len(), got: p.len() });
    }
    let mut beta = raw_beta(spec, t, tau, u)?;
    let n = model::eta_norm_sq(eta_weights, &beta).sqrt();
    if !n.is_finite() {
        return Err(DcrmError::NumericOverflow { context: "drift field" });
    }
    let mut vjp = vec![0.0; u.len()];
    match spec.mode {
        BetaMode::Raw => {
            if n >= 1.0 {
                return Err(DcrmError::ConstraintViolation { norm: n });
            }
            spec.field.accumulate_vjp(t, tau, u, p, 1.0, &mut vjp)?;
        }
        BetaMode::Squashed => {
            // J = J_g J_raw with J_g = s I + c beta (eta * beta)^T
            let (s, c) = squash_coefficients(n);
            let beta_dot_p: f64 = beta.iter().zip(p).map(|(b, q)| b * q).sum();
            let w: Vec<f64> = p
                .iter()
                .zip(&beta)
                .enumerate()
                .map(|(i, (q, b))| s * q + c * eta_weights[i % CONFIG_DIM] * b * beta_dot_p)
                .collect();
            spec.field.accumulate_vjp(t, tau, u, &w, 1.0, &mut vjp)?;
            beta.iter_mut().for_each(|b| *b *= s);
        }
    }
    Ok((beta, vjp))
}
