#![allow(dead_code)]

use drlqr_core::linalg::{spectral_radius, Mat};
use drlqr_core::{CostModel, SystemParams};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn paper_system() -> (SystemParams, CostModel) {
    let a = Mat::from_row_slice(3, 3, &[1.01, 0.01, 0.0, 0.01, 1.01, 0.01, 0.0, 0.01, 1.01]);
    (SystemParams::new(a, Mat::identity(3, 3)).unwrap(), CostModel::scaled_identity(3, 3, 1e-3).unwrap())
}

pub fn randn<R: Rng>(rng: &mut R, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// Random `(θ, cost model)` with `Q ⪰ I`, `R = I`, `Σw = I` and an open loop
/// of spectral radius in `[0.3, 1.3)`.
pub fn random_instance<R: Rng>(rng: &mut R, max_dx: usize, max_du: usize) -> (SystemParams, CostModel) {
    let dx = rng.random_range(1..=max_dx);
    let du = rng.random_range(1..=max_du);
    let m = randn(rng, dx, dx);
    let a = &m * (rng.random_range(0.3..1.3) / spectral_radius(&m).unwrap());
    let b = randn(rng, dx, du);
    let l = randn(rng, dx, dx) * 0.3;
    let q = Mat::identity(dx, dx) + &l * l.transpose();
    let cm = CostModel::new(q, Mat::identity(du, du), Mat::identity(dx, dx)).unwrap();
    (SystemParams::new(a, b).unwrap(), cm)
}
