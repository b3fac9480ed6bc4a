//! Data-driven LQR controller synthesis.
//!
//! The crate is `no_std` (with `alloc`) and contains only pure numerical
//! code: exact infinite-horizon LQR machinery, least-squares system
//! identification with Fisher-information confidence ellipsoids, the three
//! synthesis methods (certainty equivalence, domain randomization and
//! scenario robust control), the model-task Hessian, and a nonlinear
//! pendulum with cross-entropy planning.
//!
//! File formats, the benchmark harness and the command-line interface live in
//! the `drlqr` companion crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod error;
pub mod linalg;
pub mod lqr;
pub mod pendulum;
pub mod rng;
pub mod synthesis;
pub mod sysid;
pub mod theory;

#[cfg(test)]
mod test_util;

pub use error::{Error, Result};
pub use lqr::{
    dare_solve, dlyap, excess_cost, lqr_cost, optimal_gain, performance_difference,
    policy_gradient, state_covariance, Cost, CostModel, Gain, RiccatiSolution, SystemParams,
};
pub use linalg::spectral_radius;
