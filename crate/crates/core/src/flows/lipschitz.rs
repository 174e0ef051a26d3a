//! Sampling-based Lipschitz estimates.
//!
//! The estimate is the largest ratio `|F(x) - F(y)| / |x - y|` (Euclidean on
//! the `16N` vector `(u, p)`) over the tested pairs, so it is always a lower
//! bound of the true constant. Pairs come from two sources:
//!
//! 1. `pairs` independent draws from the product measure;
//! 2. `refine_steps` pairs obtained by power iteration from the best random
//!    pair: keep `x`, replace the displacement `d` by `F(x + d) - F(x)`
//!    rescaled to the original length. For maps that are linear along the
//!    dominant direction this converges to the top stretching factor, which
//!    random pairs in high dimension almost never reach.

use rayon::prelude::*;

use crate::error::{DcrmError, Result};
use crate::model::PhaseState;
use crate::observables::{sample_member, MeasureSpec};

/// Pairs closer than this are treated as coincident and redrawn.
const MIN_PAIR_DISTANCE: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzCertificate {
    pub estimate: f64,
    pub witness_pair: (PhaseState, PhaseState),
    pub pairs_tested: usize,
    /// `estimate <= 1 + tolerance`.
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzOptions {
    pub pairs: usize,
    pub seed: u64,
    pub refine_steps: usize,
    pub tolerance: f64,
}

impl LipschitzOptions {
    pub fn new(pairs: usize, seed: u64) -> Self {
        Self { pairs, seed, refine_steps: 256, tolerance: 1e-9 }
    }
}

pub fn estimate_lipschitz<F>(flow: F, measure: &MeasureSpec, n_factors: usize, pairs: usize, seed: u64) -> Result<LipschitzCertificate>
where
    F: Fn(&PhaseState) -> Result<PhaseState> + Sync,
{
    estimate_lipschitz_with(flow, measure, n_factors, &LipschitzOptions::new(pairs, seed))
}

fn ratio_of<F>(flow: &F, x: &PhaseState, y: &PhaseState) -> Result<Option<f64>>
where
    F: Fn(&PhaseState) -> Result<PhaseState>,
{
    let d = x.distance(y);
    if !(d >= MIN_PAIR_DISTANCE) {
        return Ok(None);
    }
    Ok(Some(flow(x)?.distance(&flow(y)?) / d))
}

pub fn estimate_lipschitz_with<F>(
    flow: F,
    measure: &MeasureSpec,
    n_factors: usize,
    options: &LipschitzOptions,
) -> Result<LipschitzCertificate>
where
    F: Fn(&PhaseState) -> Result<PhaseState> + Sync,
{
    if options.pairs < 1 {
        return Err(DcrmError::Input("at least one pair is required".into()));
    }
    measure.validate()?;
    let draw = |j: u64| {
        (
            sample_member(measure, n_factors, options.seed, 2 * j),
            sample_member(measure, n_factors, options.seed, 2 * j + 1),
        )
    };

    // random phase; degenerate pairs are replaced by fresh indices
    let max_attempts = options.pairs.saturating_mul(10) as u64;
    let mut next_index = 0u64;
    let mut tested = 0usize;
    let mut best: Option<(f64, u64)> = None;
    while tested < options.pairs && next_index < max_attempts {
        let batch = ((options.pairs - tested) as u64).min(max_attempts - next_index);
        let ratios = (next_index..next_index + batch)
            .into_par_iter()
            .map(|j| {
                let (x, y) = draw(j);
                ratio_of(&flow, &x, &y).map(|r| r.map(|r| (r, j)))
            })
            .collect::<Result<Vec<_>>>()?;
        next_index += batch;
        for (r, j) in ratios.into_iter().flatten() {
            tested += 1;
            if best.is_none_or(|(b, _)| r > b) {
                best = Some((r, j));
            }
        }
    }
    let (mut estimate, j) = best.ok_or(DcrmError::EstimationFailed)?;
    let (x, y0) = draw(j);
    let mut witness = (x.clone(), y0.clone());

    let fx = flow(&x)?;
    let scale = x.distance(&y0);
    let mut du: Vec<f64> = y0.u.iter().zip(&x.u).map(|(a, b)| a - b).collect();
    let mut dp: Vec<f64> = y0.p.iter().zip(&x.p).map(|(a, b)| a - b).collect();
    for _ in 0..options.refine_steps {
        let y = PhaseState {
            u: x.u.iter().zip(&du).map(|(a, d)| a + d).collect(),
            p: x.p.iter().zip(&dp).map(|(a, d)| a + d).collect(),
            t: x.t,
            tau: x.tau,
        };
        let dist = x.distance(&y);
        if !(dist >= MIN_PAIR_DISTANCE) {
            break;
        }
        let fy = flow(&y)?;
        let image = fx.distance(&fy);
        tested += 1;
        let r = image / dist;
        if r > estimate {
            estimate = r;
            witness = (x.clone(), y);
        }
        if !(image > 0.0) || !image.is_finite() {
            break;
        }
        let s = scale / image;
        du = fy.u.iter().zip(&fx.u).map(|(a, b)| s * (a - b)).collect();
        dp = fy.p.iter().zip(&fx.p).map(|(a, b)| s * (a - b)).collect();
    }

    Ok(LipschitzCertificate {
        estimate,
        witness_pair: witness,
        pairs_tested: tested,
        passed: estimate <= 1.0 + options.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::apply_regime;
    use crate::model::{Regime, RegimeSchedule};

    #[test]
    fn identity_is_one_lipschitz() {
        let cert = estimate_lipschitz(|s| Ok(s.clone()), &MeasureSpec::standard(), 2, 500, 1).unwrap();
        assert!((cert.estimate - 1.0).abs() < 1e-12);
        assert!(cert.passed);
        assert!(cert.pairs_tested >= 500);
    }

    #[test]
    fn contraction_certifies_at_exact_rate() {
        let sched = RegimeSchedule { kappa: 0.6, ..RegimeSchedule::default() };
        let s = 0.5;
        let cert = estimate_lipschitz(
            |x| apply_regime(Regime::Concentration, x, &sched, s),
            &MeasureSpec::standard(),
            3,
            1000,
            2,
        )
        .unwrap();
        assert!((cert.estimate - (-0.6f64 * s).exp()).abs() < 1e-9);
        assert!(cert.passed);
    }

    #[test]
    fn expansion_fails_with_dilation_factor() {
        let sched = RegimeSchedule { kappa_expand: 0.2, ..RegimeSchedule::default() };
        let cert = estimate_lipschitz(
            |x| apply_regime(Regime::Expansion, x, &sched, 0.5),
            &MeasureSpec::standard(),
            3,
            1000,
            3,
        )
        .unwrap();
        assert!((cert.estimate - 0.1f64.exp()).abs() < 1e-6, "{}", cert.estimate);
        assert!(!cert.passed);
        let (a, b) = &cert.witness_pair;
        let (fa, fb) = (
            apply_regime(Regime::Expansion, a, &sched, 0.5).unwrap(),
            apply_regime(Regime::Expansion, b, &sched, 0.5).unwrap(),
        );
        assert!((fa.distance(&fb) / a.distance(b) - cert.estimate).abs() < 1e-12);
    }

    #[test]
    fn degenerate_sampler_fails() {
        // collapse every draw onto the same point
        let m = MeasureSpec::isotropic(0.0, 1e-320);
        assert!(m.validate().is_ok());
        let err = estimate_lipschitz(|s| Ok(s.clone()), &m, 1, 10, 0).unwrap_err();
        assert_eq!(err, DcrmError::EstimationFailed);
    }

    #[test]
    fn zero_pairs_rejected() {
        assert!(estimate_lipschitz(|s| Ok(s.clone()), &MeasureSpec::standard(), 1, 0, 0).is_err());
    }
}
