//! Diagonal observables and product-measure ensembles.
//!
//! A diagonal observable is one base function on a single 16-dimensional
//! factor `(u_k, p_k)`, applied identically to every factor and combined by
//! an aggregator. Ensembles are drawn from a product of identical
//! per-factor Gaussians through counter-based streams keyed by
//! `(seed, member, factor)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DcrmError, Result};
use crate::model::{PhaseState, BLOCK, CONFIG_DIM, FACTOR_DIM};
use crate::rng::CounterStream;
use crate::stats;

/// Product Gaussian: every factor's 16-block is an independent Gaussian
/// with diagonal covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSpec {
    #[serde(default)]
    pub mean: [f64; FACTOR_DIM],
    #[serde(default = "unit_sigma")]
    pub sigma: [f64; FACTOR_DIM],
}

fn unit_sigma() -> [f64; FACTOR_DIM] {
    [1.0; FACTOR_DIM]
}

impl Default for MeasureSpec {
    fn default() -> Self {
        Self::standard()
    }
}

impl MeasureSpec {
    pub fn standard() -> Self {
        Self { mean: [0.0; FACTOR_DIM], sigma: [1.0; FACTOR_DIM] }
    }

    pub fn isotropic(mean: f64, sigma: f64) -> Self {
        Self { mean: [mean; FACTOR_DIM], sigma: [sigma; FACTOR_DIM] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(DcrmError::Input("measure sigma entries must be positive".into()));
        }
        if self.mean.iter().any(|m| !m.is_finite()) {
            return Err(DcrmError::Input("measure mean entries must be finite".into()));
        }
        Ok(())
    }
}

/// Draws member `index` of the ensemble keyed by `seed`. Each factor reads
/// its own substream, so the result does not depend on which other members
/// or factors were drawn.
pub fn sample_member(measure: &MeasureSpec, n_factors: usize, seed: u64, index: u64) -> PhaseState {
    let mut state = PhaseState::zeros(n_factors);
    for k in 0..n_factors {
        let mut stream = CounterStream::new(seed, index, k as u64);
        for i in 0..FACTOR_DIM {
            let v = measure.mean[i] + measure.sigma[i] * stream.normal();
            if i < CONFIG_DIM {
                state.u[k * CONFIG_DIM + i] = v;
            } else {
                state.p[k * CONFIG_DIM + i - CONFIG_DIM] = v;
            }
        }
    }
    state
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub members: Vec<PhaseState>,
    pub measure: MeasureSpec,
    pub seed: u64,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

pub fn sample_ensemble(measure: &MeasureSpec, n_factors: usize, count: usize, seed: u64) -> Result<Ensemble> {
    if count < 1 {
        return Err(DcrmError::Input("ensemble count must be at least 1".into()));
    }
    if n_factors < 1 {
        return Err(DcrmError::Input("n_factors must be at least 1".into()));
    }
    measure.validate()?;
    let members = (0..count as u64)
        .into_par_iter()
        .map(|i| sample_member(measure, n_factors, seed, i))
        .collect();
    Ok(Ensemble { members, measure: measure.clone(), seed })
}

/// Per-factor base functions. Each is 1-Lipschitz on its 16-vector except
/// `Affine`, whose constant is the Euclidean norm of its weights (at most 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BaseFunction {
    /// One coordinate of `(u_k, p_k)`, index in `0..16`.
    Coordinate { index: usize },
    /// Euclidean distance of the position block to the 3-sphere of the
    /// given radius.
    SigmaDistance {
        #[serde(default = "default_radius")]
        sphere_radius: f64,
    },
    /// `w sqrt(e) exp(-|z|^2 / 2w^2)`, centred at the origin.
    Bump { width: f64 },
    /// `w . z + offset` with `|w| <= 1`.
    Affine { weights: [f64; FACTOR_DIM], offset: f64 },
}

fn default_radius() -> f64 {
    1.0
}

impl BaseFunction {
    pub fn eval(&self, z: &[f64; FACTOR_DIM]) -> f64 {
        match self {
            BaseFunction::Coordinate { index } => z[*index],
            BaseFunction::SigmaDistance { sphere_radius } => {
                let r = z[..BLOCK].iter().map(|v| v * v).sum::<f64>().sqrt();
                (r - sphere_radius).abs()
            }
            BaseFunction::Bump { width } => {
                let r2: f64 = z.iter().map(|v| v * v).sum();
                width * 0.5f64.exp() * (-r2 / (2.0 * width * width)).exp()
            }
            BaseFunction::Affine { weights, offset } => {
                weights.iter().zip(z).map(|(w, x)| w * x).sum::<f64>() + offset
            }
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match self {
            BaseFunction::Affine { weights, .. } => weights.iter().map(|w| w * w).sum::<f64>().sqrt(),
            _ => 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BaseFunction::Coordinate { index } if *index >= FACTOR_DIM => {
                Err(DcrmError::Input(format!("coordinate index {index} out of range 0..{FACTOR_DIM}")))
            }
            BaseFunction::SigmaDistance { sphere_radius } if !(*sphere_radius > 0.0) => {
                Err(DcrmError::Input("sphere_radius must be positive".into()))
            }
            BaseFunction::Bump { width } if !(*width > 0.0) => {
                Err(DcrmError::Input("bump width must be positive".into()))
            }
            BaseFunction::Affine { .. } if self.lipschitz() > 1.0 + 1e-12 => {
                Err(DcrmError::Input("affine weights must have norm at most 1".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Aggregator {
    Mean,
    SumOverSqrtN,
    SingleFactor { factor: usize },
}

impl Aggregator {
    /// True for aggregators that are symmetric in the factors.
    pub fn is_symmetric(&self) -> bool {
        !matches!(self, Aggregator::SingleFactor { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagonalObservable {
    pub base: BaseFunction,
    pub aggregator: Aggregator,
}

impl DiagonalObservable {
    pub fn new(base: BaseFunction, aggregator: Aggregator) -> Self {
        Self { base, aggregator }
    }

    /// Lipschitz constant of the lifted observable on the `16N` space.
    pub fn claimed_lipschitz(&self, n_factors: usize) -> f64 {
        match self.aggregator {
            Aggregator::Mean => self.base.lipschitz() / (n_factors as f64).sqrt(),
            Aggregator::SumOverSqrtN | Aggregator::SingleFactor { .. } => self.base.lipschitz(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()
    }
}

/// Evaluates the base on every factor of `state` and aggregates.
pub fn lift_diagonal(obs: &DiagonalObservable, state: &PhaseState) -> Result<f64> {
    let n = state.n_factors();
    if n == 0 || state.u.len() != n * CONFIG_DIM || state.p.len() != state.u.len() {
        return Err(DcrmError::Dimension { expected: CONFIG_DIM * n.max(1), got: state.p.len() });
    }
    match obs.aggregator {
        Aggregator::SingleFactor { factor } => {
            if factor >= n {
                return Err(DcrmError::Dimension { expected: n, got: factor });
            }
            Ok(obs.base.eval(&state.factor(factor)))
        }
        Aggregator::Mean | Aggregator::SumOverSqrtN => {
            let sum: f64 = (0..n).map(|k| obs.base.eval(&state.factor(k))).sum();
            Ok(match obs.aggregator {
                Aggregator::Mean => sum / n as f64,
                _ => sum / (n as f64).sqrt(),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Expectation {
    pub mean: f64,
    /// `None` for a single-member ensemble.
    pub stderr: Option<f64>,
}

/// Monte Carlo mean and standard error of the lifted observable.
pub fn expectation(obs: &DiagonalObservable, ensemble: &Ensemble) -> Result<Expectation> {
    if ensemble.is_empty() {
        return Err(DcrmError::Input("ensemble is empty".into()));
    }
    let values = ensemble
        .members
        .par_iter()
        .map(|m| lift_diagonal(obs, m))
        .collect::<Result<Vec<f64>>>()?;
    Ok(Expectation {
        mean: stats::mean(&values),
        stderr: stats::sample_std(&values).map(|s| s / (values.len() as f64).sqrt()),
    })
}

/// Whether the lifted value is unchanged (to 1e-12) when the factors of
/// `state` are permuted.
pub fn well_definedness_check(obs: &DiagonalObservable, state: &PhaseState, perm: &[usize]) -> Result<bool> {
    let permuted = state.permute_factors(perm)?;
    let a = lift_diagonal(obs, state)?;
    let b = lift_diagonal(obs, &permuted)?;
    Ok((a - b).abs() <= 1e-12 * a.abs().max(1.0))
}

/// The observable catalog with every base and aggregator combination.
pub fn catalog() -> Vec<DiagonalObservable> {
    let mut weights = [0.0; FACTOR_DIM];
    for (i, w) in weights.iter_mut().enumerate() {
        *w = if i % 2 == 0 { 0.25 } else { -0.25 };
    }
    let bases = [
        BaseFunction::Coordinate { index: 0 },
        BaseFunction::Coordinate { index: 11 },
        BaseFunction::SigmaDistance { sphere_radius: 1.0 },
        BaseFunction::Bump { width: 1.0 },
        BaseFunction::Affine { weights, offset: 0.5 },
    ];
    let aggregators = [Aggregator::Mean, Aggregator::SumOverSqrtN, Aggregator::SingleFactor { factor: 0 }];
    bases
        .iter()
        .flat_map(|b| aggregators.iter().map(move |a| DiagonalObservable::new(b.clone(), *a)))
        .collect()
}
