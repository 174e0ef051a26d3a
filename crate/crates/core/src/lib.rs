//! Deterministic simulator and statistical test bench for Cartan-Randers
//! models: N coupled eight-dimensional degrees of freedom evolving under a
//! two-time dynamics, an internal flow `U_t` cycling through ergodic,
//! concentration and expansion regimes, and an external Hamiltonian flow
//! `U_tau` with a Hamiltonian linear in the momenta.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] and [`beta`]: phase-space types, the metric norm, the drift
//!   field catalog, the Hamiltonian and the equilibrium-surface projection.
//! * [`flows`]: RK4 integration of `U_tau`, the regime maps of `U_t`,
//!   Lipschitz certification and the Hamiltonian residual.
//! * [`observables`]: diagonal observables and product-measure ensembles.
//! * [`concentration`]: tail estimates, Gaussian bounds and the reduction
//!   experiment.
//! * [`wep`]: subsystem partitions, centre-of-mass reference trajectories
//!   and the equivalence-principle experiment.
//! * [`cli`]: configuration, orchestration and report emission.

pub mod beta;
pub mod cli;
pub mod concentration;
pub mod error;
pub mod flows;
pub mod model;
pub mod observables;
pub mod rng;
pub mod stats;
pub mod wep;

pub use error::{DcrmError, Result};
