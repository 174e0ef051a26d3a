//! Phase-space data model.
//!
//! The configuration space is a product of `N` identical factors. Every
//! factor carries eight configuration coordinates laid out as
//! `(x0, x1, x2, x3, y0, y1, y2, y3)` (position block then velocity block)
//! and eight conjugate momenta in the same order, so one factor of the
//! phase space is a 16-vector `(u_k, p_k)`.

use serde::{Deserialize, Serialize};

use crate::beta::BetaFieldSpec;
use crate::error::{DcrmError, Result};
use crate::observables::MeasureSpec;

/// Configuration coordinates per factor.
pub const CONFIG_DIM: usize = 8;
/// Phase-space coordinates per factor (configuration plus momenta).
pub const FACTOR_DIM: usize = 16;
/// Size of the position and velocity blocks inside a configuration factor.
pub const BLOCK: usize = 4;

/// One point of the `16N`-dimensional phase space together with its two
/// time coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    /// Internal time.
    pub t: f64,
    /// External (observer) time.
    pub tau: f64,
}

impl PhaseState {
    pub fn new(u: Vec<f64>, p: Vec<f64>, t: f64, tau: f64) -> Result<Self> {
        let state = Self { u, p, t, tau };
        state.validate()?;
        Ok(state)
    }

    pub fn zeros(n_factors: usize) -> Self {
        Self {
            u: vec![0.0; CONFIG_DIM * n_factors],
            p: vec![0.0; CONFIG_DIM * n_factors],
            t: 0.0,
            tau: 0.0,
        }
    }

    pub fn n_factors(&self) -> usize {
        self.u.len() / CONFIG_DIM
    }

    pub fn validate(&self) -> Result<()> {
        if self.u.is_empty() || self.u.len() % CONFIG_DIM != 0 {
            return Err(DcrmError::Dimension {
                expected: CONFIG_DIM * self.u.len().div_ceil(CONFIG_DIM).max(1),
                got: self.u.len(),
            });
        }
        if self.p.len() != self.u.len() {
            return Err(DcrmError::Dimension { expected: self.u.len(), got: self.p.len() });
        }
        let finite = self.u.iter().chain(&self.p).all(|v| v.is_finite())
            && self.t.is_finite()
            && self.tau.is_finite();
        if !finite {
            return Err(DcrmError::NumericOverflow { context: "phase state" });
        }
        Ok(())
    }

    /// The 16-vector `(u_k, p_k)` of factor `k`.
    pub fn factor(&self, k: usize) -> [f64; FACTOR_DIM] {
        let mut out = [0.0; FACTOR_DIM];
        out[..CONFIG_DIM].copy_from_slice(&self.u[k * CONFIG_DIM..(k + 1) * CONFIG_DIM]);
        out[CONFIG_DIM..].copy_from_slice(&self.p[k * CONFIG_DIM..(k + 1) * CONFIG_DIM]);
        out
    }

    /// Euclidean distance between the `(u, p)` vectors of two states.
    pub fn distance(&self, other: &PhaseState) -> f64 {
        self.u
            .iter()
            .zip(&other.u)
            .chain(self.p.iter().zip(&other.p))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Reorders factors so that factor `i` of the result is factor `perm[i]`
    /// of `self`.
    pub fn permute_factors(&self, perm: &[usize]) -> Result<PhaseState> {
        let n = self.n_factors();
        check_permutation(perm, n)?;
        let mut out = self.clone();
        for (dst, &src) in perm.iter().enumerate() {
            out.u[dst * CONFIG_DIM..(dst + 1) * CONFIG_DIM]
                .copy_from_slice(&self.u[src * CONFIG_DIM..(src + 1) * CONFIG_DIM]);
            out.p[dst * CONFIG_DIM..(dst + 1) * CONFIG_DIM]
                .copy_from_slice(&self.p[src * CONFIG_DIM..(src + 1) * CONFIG_DIM]);
        }
        Ok(out)
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(DcrmError::Dimension { expected: n, got: perm.len() });
    }
    let mut seen = vec![false; n];
    for &i in perm {
        if i >= n || seen[i] {
            return Err(DcrmError::Input(format!("not a permutation of 0..{n}")));
        }
        seen[i] = true;
    }
    Ok(())
}

/// Applies the same factor permutation to a flat `8N` vector.
pub fn permute_blocks(v: &[f64], perm: &[usize]) -> Result<Vec<f64>> {
    check_permutation(perm, v.len() / CONFIG_DIM)?;
    let mut out = vec![0.0; v.len()];
    for (dst, &src) in perm.iter().enumerate() {
        out[dst * CONFIG_DIM..(dst + 1) * CONFIG_DIM]
            .copy_from_slice(&v[src * CONFIG_DIM..(src + 1) * CONFIG_DIM]);
    }
    Ok(out)
}

/// Diagonal metric norm `sqrt(sum_k sum_i w[i] v[k,i]^2)`.
///
/// The weight vector has one entry per phase-space coordinate of a factor;
/// configuration-space vectors use the first eight weights.
pub fn eta_norm(eta_weights: &[f64; FACTOR_DIM], v: &[f64]) -> Result<f64> {
    if v.len() % CONFIG_DIM != 0 {
        return Err(DcrmError::Dimension {
            expected: CONFIG_DIM * v.len().div_ceil(CONFIG_DIM),
            got: v.len(),
        });
    }
    Ok(eta_norm_sq(eta_weights, v).sqrt())
}

pub(crate) fn eta_norm_sq(eta_weights: &[f64; FACTOR_DIM], v: &[f64]) -> f64 {
    v.chunks_exact(CONFIG_DIM)
        .map(|block| block.iter().zip(eta_weights).map(|(x, w)| w * x * x).sum::<f64>())
        .sum()
}

/// `H = sum_n beta^n p_n`. The configuration `u` only enters through
/// `beta`, it is accepted so call sites read like the Hamiltonian.
pub fn randers_hamiltonian(u: &[f64], p: &[f64], beta: &[f64]) -> Result<f64> {
    if p.len() != u.len() {
        return Err(DcrmError::Dimension { expected: u.len(), got: p.len() });
    }
    if beta.len() != u.len() {
        return Err(DcrmError::Dimension { expected: u.len(), got: beta.len() });
    }
    Ok(beta.iter().zip(p).map(|(b, q)| b * q).sum())
}

pub const DEFAULT_SPHERE_RADIUS: f64 = 1.0;

/// Projects every factor onto the equilibrium surface: the velocity block
/// onto the unit hyperboloid `(y0)^2 - |y|^2 = 1, y0 > 0` keeping the
/// spatial part, the position block radially onto the 3-sphere of the
/// given radius.
pub fn project_to_sigma(u: &[f64], sphere_radius: f64) -> Result<Vec<f64>> {
    if u.is_empty() || u.len() % CONFIG_DIM != 0 {
        return Err(DcrmError::Dimension {
            expected: CONFIG_DIM * u.len().div_ceil(CONFIG_DIM).max(1),
            got: u.len(),
        });
    }
    if !(sphere_radius > 0.0) {
        return Err(DcrmError::Input(format!("sphere radius must be positive, got {sphere_radius}")));
    }
    let mut out = u.to_vec();
    for (k, block) in out.chunks_exact_mut(CONFIG_DIM).enumerate() {
        project_factor(block, sphere_radius).ok_or(DcrmError::ProjectionUndefined { factor: k })?;
    }
    Ok(out)
}

/// In-place projection of one 8-block. `None` if the position block is zero.
pub(crate) fn project_factor(block: &mut [f64], sphere_radius: f64) -> Option<()> {
    let (x, y) = block.split_at_mut(BLOCK);
    let spatial_sq: f64 = y[1..].iter().map(|v| v * v).sum();
    y[0] = (1.0 + spatial_sq).sqrt();
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if r == 0.0 {
        return None;
    }
    let scale = sphere_radius / r;
    x.iter_mut().for_each(|v| *v *= scale);
    Some(())
}

/// Jacobian of the per-factor projection, row-major 8x8.
pub(crate) fn project_factor_jacobian(block: &[f64], sphere_radius: f64) -> Option<[[f64; 8]; 8]> {
    let mut jac = [[0.0; 8]; 8];
    let x = &block[..BLOCK];
    let y = &block[BLOCK..];
    let r2: f64 = x.iter().map(|v| v * v).sum();
    if r2 == 0.0 {
        return None;
    }
    let r = r2.sqrt();
    for i in 0..BLOCK {
        for j in 0..BLOCK {
            let delta = if i == j { 1.0 } else { 0.0 };
            jac[i][j] = sphere_radius * (delta / r - x[i] * x[j] / (r2 * r));
        }
    }
    let y0 = (1.0 + y[1..].iter().map(|v| v * v).sum::<f64>()).sqrt();
    for j in 1..BLOCK {
        jac[BLOCK][BLOCK + j] = y[j] / y0;
        jac[BLOCK + j][BLOCK + j] = 1.0;
    }
    Some(jac)
}

/// Which configuration the concentration and expansion regimes of `U_t`
/// move states relative to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ContractionTarget {
    /// A fixed configuration; length 8 (repeated over factors) or `8N`.
    Anchor { anchor: Vec<f64> },
    /// The per-state projection onto the equilibrium surface.
    Sigma {
        #[serde(default = "default_sphere_radius")]
        sphere_radius: f64,
    },
}

fn default_sphere_radius() -> f64 {
    DEFAULT_SPHERE_RADIUS
}

impl Default for ContractionTarget {
    fn default() -> Self {
        ContractionTarget::Anchor { anchor: vec![0.0; CONFIG_DIM] }
    }
}

/// Durations of the three phases of one `U_t` cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cycle {
    #[serde(default)]
    pub ergodic: f64,
    #[serde(default)]
    pub concentration: f64,
    #[serde(default)]
    pub expansion: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Ergodic,
    Concentration,
    Expansion,
}

/// A half-open internal-time interval `[start, end)` with its regime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub regime: Regime,
    pub start: f64,
    pub end: f64,
}

/// The `U_t` schedule: an ordered list of cycles plus the parameters of
/// the three regime maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeSchedule {
    #[serde(default)]
    pub cycles: Vec<Cycle>,
    /// Contraction rate of the concentration regime.
    #[serde(default = "one")]
    pub kappa: f64,
    /// Dilation rate of the expansion regime.
    #[serde(default = "one")]
    pub kappa_expand: f64,
    #[serde(default)]
    pub target: ContractionTarget,
    /// Base angular velocity of the ergodic twist map.
    #[serde(default = "one")]
    pub ergodic_omega: f64,
    /// Radius dependence of the twist angle.
    #[serde(default = "one")]
    pub ergodic_twist: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for RegimeSchedule {
    fn default() -> Self {
        Self {
            cycles: Vec::new(),
            kappa: 1.0,
            kappa_expand: 1.0,
            target: ContractionTarget::default(),
            ergodic_omega: 1.0,
            ergodic_twist: 1.0,
        }
    }
}

impl RegimeSchedule {
    pub fn single(regime: Regime, duration: f64) -> Self {
        let mut cycle = Cycle { ergodic: 0.0, concentration: 0.0, expansion: 0.0 };
        match regime {
            Regime::Ergodic => cycle.ergodic = duration,
            Regime::Concentration => cycle.concentration = duration,
            Regime::Expansion => cycle.expansion = duration,
        }
        Self { cycles: vec![cycle], ..Self::default() }
    }

    pub fn total_duration(&self) -> f64 {
        self.cycles.iter().map(|c| c.ergodic + c.concentration + c.expansion).sum()
    }

    /// Nonempty regime intervals in schedule order.
    pub fn segments(&self) -> Vec<Segment> {
        let mut out = Vec::new();
        let mut start = 0.0;
        for c in &self.cycles {
            for (regime, d) in [
                (Regime::Ergodic, c.ergodic),
                (Regime::Concentration, c.concentration),
                (Regime::Expansion, c.expansion),
            ] {
                if d > 0.0 {
                    out.push(Segment { regime, start, end: start + d });
                    start += d;
                }
            }
        }
        out
    }

    pub fn regime_at(&self, t: f64) -> Option<Segment> {
        self.segments().into_iter().find(|s| s.start <= t && t < s.end)
    }

    pub fn validate(&self, n_factors: usize) -> Result<()> {
        for c in &self.cycles {
            for d in [c.ergodic, c.concentration, c.expansion] {
                if !(d >= 0.0) || !d.is_finite() {
                    return Err(DcrmError::Input(format!("regime durations must be nonnegative, got {d}")));
                }
            }
        }
        if !(self.kappa > 0.0) || !(self.kappa_expand > 0.0) {
            return Err(DcrmError::Input("kappa and kappa_expand must be positive".into()));
        }
        match &self.target {
            ContractionTarget::Anchor { anchor } => check_broadcast(anchor, n_factors, "anchor")?,
            ContractionTarget::Sigma { sphere_radius } => {
                if !(*sphere_radius > 0.0) {
                    return Err(DcrmError::Input("sphere_radius must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

/// Accepts either one 8-block (repeated over factors) or a full `8N` vector.
pub(crate) fn check_broadcast(v: &[f64], n_factors: usize, what: &str) -> Result<()> {
    if v.len() != CONFIG_DIM && v.len() != CONFIG_DIM * n_factors {
        return Err(DcrmError::Input(format!(
            "{what} must have length {CONFIG_DIM} or {}, got {}",
            CONFIG_DIM * n_factors,
            v.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(DcrmError::Input(format!("{what} must be finite")));
    }
    Ok(())
}

#[inline]
pub(crate) fn broadcast_at(v: &[f64], i: usize) -> f64 {
    if v.len() == CONFIG_DIM {
        v[i % CONFIG_DIM]
    } else {
        v[i]
    }
}

/// Full model configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub n_factors: usize,
    pub eta_weights: [f64; FACTOR_DIM],
    pub beta: BetaFieldSpec,
    pub schedule: RegimeSchedule,
    pub measure: MeasureSpec,
    pub seed: u64,
    /// End of internal time; equals the schedule's total duration.
    pub t_horizon: f64,
    /// Reference length of the deviation law in the equivalence-principle
    /// experiment.
    pub length_scale: f64,
}

impl ModelSpec {
    /// A model with unit metric, zero drift, an empty schedule and the
    /// standard product Gaussian.
    pub fn new(n_factors: usize, seed: u64) -> Self {
        Self {
            n_factors,
            eta_weights: [1.0; FACTOR_DIM],
            beta: BetaFieldSpec::default(),
            schedule: RegimeSchedule::default(),
            measure: MeasureSpec::standard(),
            seed,
            t_horizon: 0.0,
            length_scale: 1.0,
        }
    }

    /// Replaces the schedule and sets the horizon to its total duration.
    pub fn with_schedule(mut self, schedule: RegimeSchedule) -> Self {
        self.t_horizon = schedule.total_duration();
        self.schedule = schedule;
        self
    }

    pub fn with_beta(mut self, beta: BetaFieldSpec) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_measure(mut self, measure: MeasureSpec) -> Self {
        self.measure = measure;
        self
    }

    pub fn dim(&self) -> usize {
        CONFIG_DIM * self.n_factors
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_factors < 1 {
            return Err(DcrmError::Input("n_factors must be at least 1".into()));
        }
        if self.eta_weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(DcrmError::Input("eta_weights must all be positive".into()));
        }
        if !(self.t_horizon >= 0.0) || !self.t_horizon.is_finite() {
            return Err(DcrmError::Input("t_horizon must be nonnegative".into()));
        }
        if !(self.length_scale > 0.0) || !self.length_scale.is_finite() {
            return Err(DcrmError::Input("length_scale must be positive".into()));
        }
        self.schedule.validate(self.n_factors)?;
        let total = self.schedule.total_duration();
        if (total - self.t_horizon).abs() > 1e-12 * total.max(1.0) {
            return Err(DcrmError::Input(format!(
                "schedule duration {total} does not match t_horizon {}",
                self.t_horizon
            )));
        }
        self.beta.validate(self.n_factors)?;
        self.measure.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterStream;

    #[test]
    fn eta_norm_pythagorean() {
        let mut v = vec![0.0; 8];
        v[0] = 0.6;
        v[1] = 0.8;
        assert_eq!(eta_norm(&[1.0; 16], &v).unwrap(), 1.0);
        assert_eq!(eta_norm(&[1.0; 16], &vec![0.0; 16]).unwrap(), 0.0);
    }

    #[test]
    fn eta_norm_matches_scalar_loop() {
        let mut rng = CounterStream::new(7, 0, 0);
        let mut w = [0.0; 16];
        for wi in &mut w {
            *wi = 0.1 + rng.uniform();
        }
        let v: Vec<f64> = (0..24).map(|_| rng.normal()).collect();
        let mut acc = 0.0;
        for k in 0..3 {
            for i in 0..8 {
                let x = v[8 * k + i];
                acc += w[i] * x * x;
            }
        }
        let got = eta_norm(&w, &v).unwrap();
        assert!((got - acc.sqrt()).abs() <= 1e-14 * acc.sqrt());
    }

    #[test]
    fn eta_norm_rejects_ragged_vector() {
        assert!(matches!(eta_norm(&[1.0; 16], &[1.0; 7]), Err(DcrmError::Dimension { .. })));
    }

    #[test]
    fn hamiltonian_examples() {
        let u = vec![0.0; 8];
        let mut p = vec![0.0; 8];
        p[0] = 2.0;
        assert_eq!(randers_hamiltonian(&u, &p, &[0.0; 8]).unwrap(), 0.0);
        let mut beta = vec![0.0; 8];
        beta[0] = 0.5;
        assert_eq!(randers_hamiltonian(&u, &p, &beta).unwrap(), 1.0);
        assert!(randers_hamiltonian(&u, &p[..4], &beta).is_err());
    }

    #[test]
    fn hamiltonian_matches_accumulation_loop() {
        let mut rng = CounterStream::new(11, 0, 0);
        let u: Vec<f64> = (0..32).map(|_| rng.normal()).collect();
        let p: Vec<f64> = (0..32).map(|_| rng.normal()).collect();
        let beta: Vec<f64> = (0..32).map(|_| rng.normal()).collect();
        let mut acc = 0.0;
        let mut i = 0;
        while i < 32 {
            acc += beta[i] * p[i];
            i += 1;
        }
        assert!((randers_hamiltonian(&u, &p, &beta).unwrap() - acc).abs() < 1e-13);
    }

    #[test]
    fn projection_rest_frame() {
        let u = [2.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0];
        let out = project_to_sigma(&u, 1.0).unwrap();
        assert_eq!(out, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn projection_lands_on_sigma() {
        let mut rng = CounterStream::new(3, 0, 0);
        for _ in 0..100 {
            let u: Vec<f64> = (0..16).map(|_| 3.0 * rng.normal()).collect();
            let out = project_to_sigma(&u, 2.5).unwrap();
            for block in out.chunks_exact(8) {
                let r: f64 = block[..4].iter().map(|v| v * v).sum::<f64>().sqrt();
                let mink = block[4] * block[4] - block[5..].iter().map(|v| v * v).sum::<f64>();
                assert!((r - 2.5).abs() < 1e-12);
                assert!((mink - 1.0).abs() < 1e-12 * block[4] * block[4]);
            }
            let again = project_to_sigma(&out, 2.5).unwrap();
            for (a, b) in again.iter().zip(&out) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn projection_undefined_at_zero_position() {
        let u = [0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        // factor 1 fine, factor 0 degenerate
        assert_eq!(project_to_sigma(&u, 1.0), Err(DcrmError::ProjectionUndefined { factor: 0 }));
    }

    #[test]
    fn projection_jacobian_matches_finite_differences() {
        let block = [0.3, -1.2, 0.7, 0.4, 2.0, 0.5, -0.3, 1.1];
        let jac = project_factor_jacobian(&block, 1.7).unwrap();
        let h = 1e-6;
        for j in 0..8 {
            let mut plus = block;
            let mut minus = block;
            plus[j] += h;
            minus[j] -= h;
            project_factor(&mut plus, 1.7).unwrap();
            project_factor(&mut minus, 1.7).unwrap();
            for i in 0..8 {
                let fd = (plus[i] - minus[i]) / (2.0 * h);
                assert!((fd - jac[i][j]).abs() < 1e-8, "({i},{j}) fd={fd} analytic={}", jac[i][j]);
            }
        }
    }

    #[test]
    fn schedule_segments_skip_empty_regimes() {
        let s = RegimeSchedule {
            cycles: vec![
                Cycle { ergodic: 1.0, concentration: 0.0, expansion: 0.5 },
                Cycle { ergodic: 0.0, concentration: 2.0, expansion: 0.0 },
            ],
            ..RegimeSchedule::default()
        };
        let segs = s.segments();
        assert_eq!(segs.len(), 3);
        assert_eq!(segs[1].regime, Regime::Expansion);
        assert_eq!((segs[2].start, segs[2].end), (1.5, 3.5));
        assert_eq!(s.regime_at(1.5).unwrap().regime, Regime::Concentration);
        assert!(s.regime_at(3.5).is_none());
    }

    #[test]
    fn spec_validation() {
        assert!(ModelSpec::new(1, 0).validate().is_ok());
        assert!(ModelSpec::new(0, 0).validate().is_err());
        let mut spec = ModelSpec::new(2, 0).with_schedule(RegimeSchedule::single(Regime::Ergodic, 1.0));
        assert!(spec.validate().is_ok());
        spec.t_horizon = 2.0;
        assert!(spec.validate().is_err());
    }
}
