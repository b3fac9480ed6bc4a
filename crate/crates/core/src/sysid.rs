//! Data generation, least-squares identification, Fisher-information
//! estimates and confidence ellipsoids.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{psd_factor, symmetrize, Mat, Vector};
use crate::lqr::{CostModel, SystemParams};
use crate::rng;

/// Condition-number threshold above which the regressor is rejected.
pub const MAX_REGRESSOR_CONDITION: f64 = 1e12;

/// One rollout: states `X₁ … X_{T+1}` (rows) and inputs `U₁ … U_T` (rows).
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Mat,
    pub inputs: Mat,
}

impl Trajectory {
    pub fn new(states: Mat, inputs: Mat) -> Result<Self> {
        if states.nrows() != inputs.nrows() + 1 || inputs.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "trajectory has {} states and {} inputs",
                states.nrows(),
                inputs.nrows()
            )));
        }
        if states.iter().chain(inputs.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("trajectory contains non-finite entries".into()));
        }
        Ok(Self { states, inputs })
    }

    /// Number of transitions `T`.
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    /// Regressor `z_t = (X_t; U_t)` for `t` in `0..T`.
    pub fn regressor(&self, t: usize) -> Vector {
        let dx = self.states.ncols();
        let du = self.inputs.ncols();
        let mut z = Vector::zeros(dx + du);
        z.rows_mut(0, dx).copy_from(&self.states.row(t).transpose());
        z.rows_mut(dx, du).copy_from(&self.inputs.row(t).transpose());
        z
    }
}

/// `N` rollouts of equal length.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    trajectories: Vec<Trajectory>,
    dx: usize,
    du: usize,
    /// Input covariance used during collection, when known.
    pub sigma_u: Option<Mat>,
    /// Seed the dataset was collected with, when known.
    pub seed: Option<u64>,
}

impl Dataset {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        let first = trajectories
            .first()
            .ok_or_else(|| Error::InvalidArgument("dataset needs at least one trajectory".into()))?;
        let (dx, du, len) = (first.states.ncols(), first.inputs.ncols(), first.len());
        if dx == 0 || du == 0 {
            return Err(Error::Dimension("dataset has zero state or input dimension".into()));
        }
        for (n, tr) in trajectories.iter().enumerate() {
            if tr.states.ncols() != dx || tr.inputs.ncols() != du || tr.len() != len {
                return Err(Error::Dimension(format!(
                    "trajectory {n} does not match the shape of trajectory 0"
                )));
            }
        }
        Ok(Self { trajectories, dx, du, sigma_u: None, seed: None })
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn dx(&self) -> usize {
        self.dx
    }

    pub fn du(&self) -> usize {
        self.du
    }

    /// Number of trajectories `N`.
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Trajectory length `T`.
    pub fn horizon(&self) -> usize {
        self.trajectories[0].len()
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, factor: &Mat) -> Vector {
    let z = Vector::from_fn(factor.ncols(), |_, _| rng.sample(StandardNormal));
    factor * z
}

/// Rolls out `X_{t+1} = A X_t + B U_t + W_t` from `X₁ = 0` with
/// `U_t ~ N(0, Σu)` and `W_t ~ N(0, noise_cov)`.
///
/// Inputs and noise are drawn alternately per step (`U_t` then `W_t`).
pub fn simulate_with_noise<R: Rng + ?Sized>(
    theta: &SystemParams,
    noise_cov: &Mat,
    horizon: usize,
    sigma_u: &Mat,
    rng: &mut R,
) -> Result<Trajectory> {
    let (dx, du) = (theta.dx(), theta.du());
    if horizon == 0 {
        return Err(Error::InvalidArgument("trajectory length must be at least 1".into()));
    }
    if sigma_u.shape() != (du, du) || noise_cov.shape() != (dx, dx) {
        return Err(Error::Dimension("input or noise covariance has the wrong shape".into()));
    }
    let lu = psd_factor(sigma_u);
    let lw = psd_factor(noise_cov);
    let mut states = Mat::zeros(horizon + 1, dx);
    let mut inputs = Mat::zeros(horizon, du);
    let mut x = Vector::zeros(dx);
    for t in 0..horizon {
        let u = gaussian(rng, &lu);
        let w = gaussian(rng, &lw);
        let next = theta.a() * &x + theta.b() * &u + w;
        inputs.row_mut(t).copy_from(&u.transpose());
        states.row_mut(t + 1).copy_from(&next.transpose());
        x = next;
    }
    Trajectory::new(states, inputs)
}

/// [`simulate_with_noise`] with the process noise of the cost model.
pub fn simulate<R: Rng + ?Sized>(
    theta: &SystemParams,
    cm: &CostModel,
    horizon: usize,
    sigma_u: &Mat,
    rng: &mut R,
) -> Result<Trajectory> {
    simulate_with_noise(theta, cm.sigma_w(), horizon, sigma_u, rng)
}

/// `N` independent rollouts; trajectory `n` uses sub-stream `n` of `seed`.
pub fn collect_dataset_with_noise(
    theta: &SystemParams,
    noise_cov: &Mat,
    n: usize,
    horizon: usize,
    sigma_u: &Mat,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("number of trajectories must be at least 1".into()));
    }
    let trajectories = (0..n as u64)
        .map(|i| simulate_with_noise(theta, noise_cov, horizon, sigma_u, &mut rng::stream(seed, &[i])))
        .collect::<Result<Vec<_>>>()?;
    let mut ds = Dataset::new(trajectories)?;
    ds.sigma_u = Some(sigma_u.clone());
    ds.seed = Some(seed);
    Ok(ds)
}

pub fn collect_dataset(
    theta: &SystemParams,
    cm: &CostModel,
    n: usize,
    horizon: usize,
    sigma_u: &Mat,
    seed: u64,
) -> Result<Dataset> {
    collect_dataset_with_noise(theta, cm.sigma_w(), n, horizon, sigma_u, seed)
}

/// Stacked regressor `Z` (rows `z_tᵀ`) and targets `Y` (rows `X_{t+1}ᵀ`).
fn stacked_regression(ds: &Dataset) -> (Mat, Mat) {
    let (dx, du) = (ds.dx(), ds.du());
    let rows = ds.len() * ds.horizon();
    let mut z = Mat::zeros(rows, dx + du);
    let mut y = Mat::zeros(rows, dx);
    let mut row = 0;
    for tr in ds.trajectories() {
        for t in 0..tr.len() {
            z.view_mut((row, 0), (1, dx)).copy_from(&tr.states.row(t));
            z.view_mut((row, dx), (1, du)).copy_from(&tr.inputs.row(t));
            y.row_mut(row).copy_from(&tr.states.row(t + 1));
            row += 1;
        }
    }
    (z, y)
}

/// Least-squares estimate of `[A B]`, solved by QR on the stacked regressor.
pub fn least_squares(ds: &Dataset) -> Result<SystemParams> {
    let (dx, du) = (ds.dx(), ds.du());
    let p = dx + du;
    let (z, y) = stacked_regression(ds);
    if z.nrows() < p {
        return Err(Error::RankDeficient { rank: z.nrows(), expected: p });
    }
    let qr = z.qr();
    let r = qr.r();
    let sv = r.clone().svd(false, false).singular_values;
    let smax = sv.iter().fold(0.0f64, |a, v| a.max(*v));
    let rank = sv.iter().filter(|s| **s > smax / MAX_REGRESSOR_CONDITION).count();
    if smax == 0.0 || rank < p {
        return Err(Error::RankDeficient { rank: if smax == 0.0 { 0 } else { rank }, expected: p });
    }
    let qty = qr.q().transpose() * &y;
    let w = r
        .solve_upper_triangular(&qty)
        .ok_or(Error::RankDeficient { rank, expected: p })?;
    let stacked = w.transpose();
    SystemParams::new(stacked.columns(0, dx).into_owned(), stacked.columns(dx, du).into_owned())
}

/// Normal-equation defect `Σ (X_{t+1} − [Â B̂] z_t) z_tᵀ`.
pub fn residual_orthogonality(ds: &Dataset, theta: &SystemParams) -> Mat {
    let (z, y) = stacked_regression(ds);
    let resid = y - &z * theta.stacked().transpose();
    resid.transpose() * z
}

/// Running sum of regressor outer products over trajectories.
#[derive(Clone, Debug)]
pub struct GramAccumulator {
    sum: Mat,
    sum_sq: Mat,
    count: usize,
}

impl GramAccumulator {
    pub fn new(dim: usize) -> Self {
        Self { sum: Mat::zeros(dim, dim), sum_sq: Mat::zeros(dim, dim), count: 0 }
    }

    /// Adds `Σ_t z_t z_tᵀ` of one trajectory.
    pub fn push(&mut self, tr: &Trajectory) {
        let dim = self.sum.nrows();
        let mut g = Mat::zeros(dim, dim);
        for t in 0..tr.len() {
            let z = tr.regressor(t);
            g.ger(1.0, &z, &z, 1.0);
        }
        self.sum_sq += g.component_mul(&g);
        self.sum += g;
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Per-trajectory average `Ĝ`.
    pub fn mean(&self) -> Mat {
        symmetrize(&(&self.sum / self.count.max(1) as f64))
    }

    /// Entrywise standard error of [`GramAccumulator::mean`].
    pub fn std_error(&self) -> Mat {
        let n = self.count as f64;
        if self.count < 2 {
            return Mat::zeros(self.sum.nrows(), self.sum.ncols());
        }
        let mean = &self.sum / n;
        let var = (&self.sum_sq / n - mean.component_mul(&mean)) * (n / (n - 1.0));
        var.map(|v| libm::sqrt(v.max(0.0) / n))
    }
}

/// Per-trajectory Fisher information `Ĝ ⊗ Σw⁻¹`.
#[derive(Clone, Debug)]
pub struct FisherEstimate {
    pub matrix: Mat,
    /// The `(dx+du)×(dx+du)` regressor second moment `Ĝ`.
    pub gram: Mat,
    /// Entrywise standard error of `gram`, for Monte Carlo estimates.
    pub gram_std_error: Mat,
    pub trajectories: usize,
}

impl FisherEstimate {
    pub fn from_gram(acc: &GramAccumulator, cm: &CostModel) -> Result<Self> {
        let w_inv = cm
            .sigma_w()
            .clone()
            .try_inverse()
            .ok_or(Error::InvalidMatrix { name: "Σw", property: "invertible" })?;
        let gram = acc.mean();
        let matrix = symmetrize(&gram.kronecker(&symmetrize(&w_inv)));
        Ok(Self { matrix, gram, gram_std_error: acc.std_error(), trajectories: acc.count() })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// `(1/N) Σ_{n,t} z z ᵀ ⊗ Σw⁻¹`.
pub fn fisher_estimate(ds: &Dataset, cm: &CostModel) -> Result<FisherEstimate> {
    if cm.dx() != ds.dx() {
        return Err(Error::Dimension("cost model and dataset disagree on dx".into()));
    }
    let mut acc = GramAccumulator::new(ds.dx() + ds.du());
    for tr in ds.trajectories() {
        acc.push(tr);
    }
    FisherEstimate::from_gram(&acc, cm)
}

/// `G = {θ : (θ−θ̂)ᵀ S (θ−θ̂) ≤ ρ²} = {θ̂ + Γw : ‖w‖ ≤ 1}`.
#[derive(Clone, Debug)]
pub struct ConfidenceEllipsoid {
    center: SystemParams,
    shape: Mat,
    radius_sq: f64,
    gamma: Mat,
}

/// `16 (dθ + ln(2/δ))`.
pub fn ellipsoid_radius_sq(dtheta: usize, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidDelta(delta));
    }
    Ok(16.0 * (dtheta as f64 + libm::log(2.0 / delta)))
}

impl ConfidenceEllipsoid {
    /// Builds the ellipsoid from a PD shape matrix and a nonnegative radius².
    pub fn from_parts(center: SystemParams, shape: Mat, radius_sq: f64) -> Result<Self> {
        let d = center.dtheta();
        if shape.shape() != (d, d) {
            return Err(Error::Dimension(format!("ellipsoid shape must be {d}x{d}")));
        }
        if !(radius_sq >= 0.0) || !radius_sq.is_finite() {
            return Err(Error::InvalidArgument(format!("radius² must be nonnegative, got {radius_sq}")));
        }
        let shape = symmetrize(&shape);
        let eig = shape.clone().symmetric_eigen();
        let lmax = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(*v));
        let lmin = eig.eigenvalues.iter().fold(f64::INFINITY, |a, v| a.min(*v));
        if !(lmin > 1e-14 * lmax.max(f64::MIN_POSITIVE)) || lmax <= 0.0 {
            return Err(Error::SingularFisher);
        }
        let radius = libm::sqrt(radius_sq);
        let scale = eig.eigenvalues.map(|l| radius / libm::sqrt(l));
        let gamma = symmetrize(&(&eig.eigenvectors * Mat::from_diagonal(&scale) * eig.eigenvectors.transpose()));
        Ok(Self { center, shape, radius_sq, gamma })
    }

    pub fn center(&self) -> &SystemParams {
        &self.center
    }

    pub fn shape(&self) -> &Mat {
        &self.shape
    }

    pub fn radius_sq(&self) -> f64 {
        self.radius_sq
    }

    /// Symmetric factor with `Γ Γᵀ = ρ² S⁻¹`.
    pub fn gamma(&self) -> &Mat {
        &self.gamma
    }

    pub fn dim(&self) -> usize {
        self.shape.nrows()
    }

    /// `(θ−θ̂)ᵀ S (θ−θ̂)`.
    pub fn mahalanobis_sq(&self, theta: &SystemParams) -> f64 {
        let d = theta.flatten() - self.center.flatten();
        d.dot(&(&self.shape * &d))
    }

    pub fn contains(&self, theta: &SystemParams) -> bool {
        self.mahalanobis_sq(theta) <= self.radius_sq * (1.0 + 1e-10) + 1e-300
    }

    /// `θ̂ + Γ w`.
    pub fn point(&self, w: &Vector) -> Result<SystemParams> {
        if w.len() != self.dim() {
            return Err(Error::Dimension(format!("ellipsoid point needs {} coordinates", self.dim())));
        }
        self.center.perturbed((&self.gamma * w).as_slice())
    }
}

/// Confidence ellipsoid with `S = N·FÎ` and `ρ² = 16(dθ + ln(2/δ))`.
pub fn confidence_ellipsoid(
    center: &SystemParams,
    fisher: &FisherEstimate,
    n: usize,
    delta: f64,
) -> Result<ConfidenceEllipsoid> {
    let radius_sq = ellipsoid_radius_sq(center.dtheta(), delta)?;
    if fisher.dim() != center.dtheta() {
        return Err(Error::Dimension("Fisher estimate does not match the parameter dimension".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("number of experiments must be positive".into()));
    }
    ConfidenceEllipsoid::from_parts(center.clone(), &fisher.matrix * n as f64, radius_sq)
}

/// Uniform point of the unit ball in `dim` dimensions.
pub fn unit_ball_point<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vector {
    loop {
        let g = Vector::from_fn(dim, |_, _| rng.sample(StandardNormal));
        let norm = g.norm();
        if norm > 0.0 {
            let u: f64 = rng.random();
            let radius = libm::pow(u, 1.0 / dim as f64);
            return g * (radius / norm);
        }
    }
}

/// `count` parameters drawn uniformly from the ellipsoid.
pub fn sample_uniform<R: Rng + ?Sized>(
    g: &ConfidenceEllipsoid,
    count: usize,
    rng: &mut R,
) -> Result<Vec<SystemParams>> {
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    (0..count).map(|_| g.point(&unit_ball_point(rng, g.dim()))).collect()
}

/// `count / 2` antithetic pairs `θ̂ ± Γw` with `w` uniform in the unit ball,
/// so the sample mean is exactly the center. `count` must be even.
pub fn sample_antithetic<R: Rng + ?Sized>(
    g: &ConfidenceEllipsoid,
    count: usize,
    rng: &mut R,
) -> Result<Vec<SystemParams>> {
    if count == 0 || count % 2 != 0 {
        return Err(Error::InvalidArgument(format!("antithetic sampling needs a positive even count, got {count}")));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count / 2 {
        let w = unit_ball_point(rng, g.dim());
        out.push(g.point(&w)?);
        out.push(g.point(&-w)?);
    }
    Ok(out)
}
