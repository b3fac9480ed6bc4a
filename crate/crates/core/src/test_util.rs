use rand::Rng;
use rand_distr::StandardNormal;

use crate::linalg::{spectral_radius, Mat};
use crate::lqr::{CostModel, SystemParams};

pub fn scalar(v: f64) -> Mat {
    Mat::from_element(1, 1, v)
}

/// The 3-state benchmark system with `B = I`, `Q = 1e-3 I`, `R = I`.
pub fn paper_system() -> (SystemParams, CostModel) {
    let a = Mat::from_row_slice(3, 3, &[1.01, 0.01, 0.0, 0.01, 1.01, 0.01, 0.0, 0.01, 1.01]);
    let theta = SystemParams::new(a, Mat::identity(3, 3)).unwrap();
    (theta, CostModel::scaled_identity(3, 3, 1e-3).unwrap())
}

pub fn randn<R: Rng>(rng: &mut R, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// Random matrix rescaled to spectral radius `rho`.
pub fn random_stable<R: Rng>(rng: &mut R, n: usize, rho: f64) -> Mat {
    let m = randn(rng, n, n);
    let r = spectral_radius(&m).unwrap();
    m * (rho / r)
}

/// Random stabilizable instance with `Q ⪰ I`, `R = I`, `Σw = I`.
pub fn random_instance<R: Rng>(rng: &mut R, max_dx: usize, max_du: usize) -> (SystemParams, CostModel) {
    let dx = rng.random_range(1..=max_dx);
    let du = rng.random_range(1..=max_du);
    let rho = rng.random_range(0.3..1.3);
    let a = random_stable(rng, dx, rho);
    let b = randn(rng, dx, du);
    let l = randn(rng, dx, dx) * 0.3;
    let q = Mat::identity(dx, dx) + &l * l.transpose();
    let cm = CostModel::new(q, Mat::identity(du, du), Mat::identity(dx, dx)).unwrap();
    (SystemParams::new(a, b).unwrap(), cm)
}
