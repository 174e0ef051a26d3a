//! Integration of the two dynamics and certification of the internal flow.
//!
//! * [`utau`]: RK4 for the external-time Hamiltonian system
//!   `du/dtau = beta`, `dp/dtau = -(d beta/du)^T p`.
//! * [`ut`]: the internal-time regime maps (ergodic twist, exponential
//!   contraction, exponential dilation), the schedule driver and the
//!   Hamiltonian residual.
//! * [`lipschitz`]: sampling-based Lipschitz estimates of flow maps.

pub mod lipschitz;
pub mod ut;
pub mod utau;

pub use lipschitz::{estimate_lipschitz, estimate_lipschitz_with, LipschitzCertificate, LipschitzOptions};
pub use ut::{advance_ut, advance_ut_until, apply_regime, hamiltonian_residual, run_cycle, step_ut};
pub use utau::{integrate_utau, step_utau, Trajectory};
