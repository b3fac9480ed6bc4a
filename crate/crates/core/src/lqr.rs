//! Infinite-horizon discrete-time LQR: Lyapunov and Riccati solvers, average
//! cost, excess cost and the closed-form policy gradient.
//!
//! Conventions: the system is `x⁺ = A x + B u + w` with `w ~ N(0, Σw)`, the
//! controller is `u = K x`, and `dlyap(X, Y)` solves `P = Xᵀ P X + Y`.

use alloc::format;
use core::cmp::Ordering;
use core::fmt;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{
    check_symmetric_bound, is_stable_radius, opnorm, spectral_radius, symmetrize, unvec_cols,
    vec_cols, Mat, Vector,
};

/// Kronecker-product Lyapunov solves are used up to this state dimension.
const KRONECKER_MAX_DIM: usize = 30;
const LYAP_TOL: f64 = 1e-12;
const RICCATI_TOL: f64 = 1e-12;
const RICCATI_MAX_ITERS: usize = 500;
const RICCATI_OVERFLOW: f64 = 1e150;
/// Accepted DARE defect, relative to `1 + ‖P‖`.
pub const DARE_RESIDUAL_TOL: f64 = 1e-8;

/// Model parameter θ: the pair `(A, B)` with flat view `vec([A B])`.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemParams {
    a: Mat,
    b: Mat,
}

impl SystemParams {
    pub fn new(a: Mat, b: Mat) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(Error::Dimension(format!("A must be square, got {}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "B must have {} rows and at least one column, got {}x{}",
                a.nrows(),
                b.nrows(),
                b.ncols()
            )));
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn b(&self) -> &Mat {
        &self.b
    }

    pub fn dx(&self) -> usize {
        self.a.nrows()
    }

    pub fn du(&self) -> usize {
        self.b.ncols()
    }

    /// Dimension of the flat parameter, `dx (dx + du)`.
    pub fn dtheta(&self) -> usize {
        self.dx() * (self.dx() + self.du())
    }

    /// The block matrix `[A B]`.
    pub fn stacked(&self) -> Mat {
        let (dx, du) = (self.dx(), self.du());
        let mut m = Mat::zeros(dx, dx + du);
        m.columns_mut(0, dx).copy_from(&self.a);
        m.columns_mut(dx, du).copy_from(&self.b);
        m
    }

    /// Column-major stacking of `[A B]`.
    pub fn flatten(&self) -> Vector {
        let mut v = Vector::zeros(self.dtheta());
        let na = self.dx() * self.dx();
        v.rows_mut(0, na).copy_from_slice(self.a.as_slice());
        v.rows_mut(na, self.b.len()).copy_from_slice(self.b.as_slice());
        v
    }

    /// Inverse of [`SystemParams::flatten`].
    pub fn unflatten(v: &[f64], dx: usize, du: usize) -> Result<Self> {
        if dx == 0 || du == 0 {
            return Err(Error::Dimension(format!("dx and du must be positive, got {dx} and {du}")));
        }
        let m = unvec_cols(v, dx, dx + du)?;
        Self::new(m.columns(0, dx).into_owned(), m.columns(dx, du).into_owned())
    }

    /// `A + B K`.
    pub fn closed_loop(&self, k: &Gain) -> Result<Mat> {
        let km = k.matrix();
        if km.nrows() != self.du() || km.ncols() != self.dx() {
            return Err(Error::Dimension(format!(
                "gain is {}x{}, system needs {}x{}",
                km.nrows(),
                km.ncols(),
                self.du(),
                self.dx()
            )));
        }
        Ok(&self.a + &self.b * km)
    }

    /// `θ + Δ` in the flat coordinates.
    pub fn perturbed(&self, delta: &[f64]) -> Result<Self> {
        if delta.len() != self.dtheta() {
            return Err(Error::Dimension(format!(
                "perturbation has length {}, expected {}",
                delta.len(),
                self.dtheta()
            )));
        }
        let v = self.flatten() + DVector::from_column_slice(delta);
        Self::unflatten(v.as_slice(), self.dx(), self.du())
    }

    /// Euclidean distance between flat parameters.
    pub fn distance(&self, other: &Self) -> f64 {
        (self.flatten() - other.flatten()).norm()
    }
}

/// Quadratic cost weights and process-noise covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct CostModel {
    q: Mat,
    r: Mat,
    sigma_w: Mat,
}

impl CostModel {
    const TOL: f64 = 1e-10;

    pub fn new(q: Mat, r: Mat, sigma_w: Mat) -> Result<Self> {
        if q.nrows() != sigma_w.nrows() {
            return Err(Error::Dimension(format!(
                "Q is {}x{} but Σw is {}x{}",
                q.nrows(),
                q.ncols(),
                sigma_w.nrows(),
                sigma_w.ncols()
            )));
        }
        check_symmetric_bound(&q, "Q", "symmetric positive semidefinite", false, Self::TOL)?;
        check_symmetric_bound(&r, "R", "symmetric positive definite", true, Self::TOL)?;
        check_symmetric_bound(&sigma_w, "Σw", "symmetric positive definite", true, Self::TOL)?;
        Ok(Self {
            q: symmetrize(&q),
            r: symmetrize(&r),
            sigma_w: symmetrize(&sigma_w),
        })
    }

    /// `Q = q_scale·I`, `R = I`, `Σw = I`.
    pub fn scaled_identity(dx: usize, du: usize, q_scale: f64) -> Result<Self> {
        Self::new(Mat::identity(dx, dx) * q_scale, Mat::identity(du, du), Mat::identity(dx, dx))
    }

    pub fn q(&self) -> &Mat {
        &self.q
    }

    pub fn r(&self) -> &Mat {
        &self.r
    }

    pub fn sigma_w(&self) -> &Mat {
        &self.sigma_w
    }

    pub fn dx(&self) -> usize {
        self.q.nrows()
    }

    pub fn du(&self) -> usize {
        self.r.nrows()
    }

    fn check_against(&self, theta: &SystemParams) -> Result<()> {
        if self.dx() != theta.dx() || self.du() != theta.du() {
            return Err(Error::Dimension(format!(
                "cost model is for dx={}, du={} but system has dx={}, du={}",
                self.dx(),
                self.du(),
                theta.dx(),
                theta.du()
            )));
        }
        Ok(())
    }
}

/// Static state feedback `u = K x`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gain(Mat);

impl Gain {
    pub fn new(k: Mat) -> Self {
        Self(k)
    }

    pub fn zeros(du: usize, dx: usize) -> Self {
        Self(Mat::zeros(du, dx))
    }

    pub fn matrix(&self) -> &Mat {
        &self.0
    }

    pub fn into_inner(self) -> Mat {
        self.0
    }
}

impl From<Mat> for Gain {
    fn from(m: Mat) -> Self {
        Self(m)
    }
}

/// Stabilizing solution of the discrete algebraic Riccati equation.
#[derive(Clone, Debug)]
pub struct RiccatiSolution {
    pub p: Mat,
    pub k: Gain,
    /// Operator norm of the DARE defect at `p`.
    pub residual: f64,
}

/// Average LQR cost, with divergence represented explicitly.
///
/// `Infinite` orders above every finite value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Cost {
    Finite(f64),
    Infinite,
}

impl Cost {
    pub fn is_finite(&self) -> bool {
        matches!(self, Cost::Finite(_))
    }

    pub fn is_infinite(&self) -> bool {
        !self.is_finite()
    }

    /// Finite value, or `f64::INFINITY`.
    pub fn value(&self) -> f64 {
        match self {
            Cost::Finite(v) => *v,
            Cost::Infinite => f64::INFINITY,
        }
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            Cost::Finite(v) => Some(*v),
            Cost::Infinite => None,
        }
    }

    /// Maps non-finite floats to `Infinite`.
    pub fn from_value(v: f64) -> Self {
        if v.is_finite() {
            Cost::Finite(v)
        } else {
            Cost::Infinite
        }
    }
}

impl Eq for Cost {}

impl PartialOrd for Cost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cost {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Cost::Finite(a), Cost::Finite(b)) => a.total_cmp(b),
            (Cost::Finite(_), Cost::Infinite) => Ordering::Less,
            (Cost::Infinite, Cost::Finite(_)) => Ordering::Greater,
            (Cost::Infinite, Cost::Infinite) => Ordering::Equal,
        }
    }
}

impl fmt::Display for Cost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cost::Finite(v) => write!(f, "{v}"),
            Cost::Infinite => f.write_str("inf"),
        }
    }
}

/// Solves `P = Aclᵀ P Acl + Qrhs` for a Schur-stable `Acl`.
pub fn dlyap(acl: &Mat, qrhs: &Mat) -> Result<Mat> {
    if !acl.is_square() || qrhs.shape() != acl.shape() {
        return Err(Error::Dimension(format!(
            "dlyap with A {}x{} and Q {}x{}",
            acl.nrows(),
            acl.ncols(),
            qrhs.nrows(),
            qrhs.ncols()
        )));
    }
    let rho = spectral_radius(acl)?;
    if !is_stable_radius(rho) {
        return Err(Error::Unstable(rho));
    }
    dlyap_stable(acl, qrhs)
}

/// [`dlyap`] without the stability check; callers must have verified it.
pub(crate) fn dlyap_stable(acl: &Mat, qrhs: &Mat) -> Result<Mat> {
    let n = acl.nrows();
    let p = if n <= KRONECKER_MAX_DIM {
        let at = acl.transpose();
        let lhs = Mat::identity(n * n, n * n) - at.kronecker(&at);
        let sol = lhs
            .lu()
            .solve(&vec_cols(qrhs))
            .ok_or(Error::Unstable(1.0))?;
        Mat::from_column_slice(n, n, sol.as_slice())
    } else {
        smith(acl, qrhs)?
    };
    Ok(symmetrize(&p))
}

fn smith(acl: &Mat, qrhs: &Mat) -> Result<Mat> {
    const MAX_SQUARINGS: usize = 200;
    let mut p = qrhs.clone();
    let mut ak = acl.clone();
    for _ in 0..MAX_SQUARINGS {
        let incr = ak.transpose() * &p * &ak;
        p += &incr;
        if incr.norm() <= LYAP_TOL * (1.0 + p.norm()) {
            return Ok(p);
        }
        ak = &ak * &ak;
    }
    Err(Error::NoConvergence("Smith iteration", MAX_SQUARINGS))
}

/// Operator norm of the DARE defect.
pub fn dare_residual(theta: &SystemParams, cm: &CostModel, p: &Mat) -> f64 {
    let (a, b) = (theta.a(), theta.b());
    let at = a.transpose();
    let bt = b.transpose();
    let s = cm.r() + &bt * p * b;
    let coupling = &bt * p * a;
    let correction = match s.lu().solve(&coupling) {
        Some(x) => coupling.transpose() * x,
        None => return f64::INFINITY,
    };
    let defect = p - &at * p * a + correction - cm.q();
    opnorm(&defect)
}

fn gain_from_value(theta: &SystemParams, cm: &CostModel, p: &Mat) -> Option<Mat> {
    let bt = theta.b().transpose();
    let s = cm.r() + &bt * p * theta.b();
    let rhs = &bt * p * theta.a();
    s.lu().solve(&rhs).map(|x| -x)
}

/// Structure-preserving doubling iteration; returns the converged value matrix.
fn sda(theta: &SystemParams, cm: &CostModel) -> Option<Mat> {
    let n = theta.dx();
    let r_inv_bt = cm.r().clone().lu().solve(&theta.b().transpose())?;
    let mut g = theta.b() * r_inv_bt;
    let mut h = cm.q().clone();
    let mut a = theta.a().clone();
    let eye = Mat::identity(n, n);
    for _ in 0..RICCATI_MAX_ITERS {
        let w = (&eye + &g * &h).lu();
        let wa = w.solve(&a)?;
        let wg = w.solve(&g)?;
        let at = a.transpose();
        let h_next = symmetrize(&(&h + &at * &h * &wa));
        let g_next = symmetrize(&(&g + &a * wg * &at));
        a = &a * wa;
        let step = (&h_next - &h).norm();
        h = h_next;
        g = g_next;
        if !h.iter().all(|v| v.is_finite()) || h.trace().abs() > RICCATI_OVERFLOW {
            return None;
        }
        if step <= RICCATI_TOL * (1.0 + h.norm()) {
            return Some(h);
        }
    }
    None
}

/// Damped fixed-point Riccati recursion, used when doubling fails.
fn riccati_recursion(theta: &SystemParams, cm: &CostModel) -> Option<Mat> {
    const DAMPING: f64 = 0.5;
    let (a, b) = (theta.a(), theta.b());
    let at = a.transpose();
    let bt = b.transpose();
    let mut p = cm.q().clone();
    for _ in 0..RICCATI_MAX_ITERS {
        let s = cm.r() + &bt * &p * b;
        let coupling = &bt * &p * a;
        let x = s.lu().solve(&coupling)?;
        let next = &at * &p * a - coupling.transpose() * x + cm.q();
        let next = symmetrize(&(&p * (1.0 - DAMPING) + next * DAMPING));
        let step = (&next - &p).norm();
        p = next;
        if !p.iter().all(|v| v.is_finite()) || p.trace().abs() > RICCATI_OVERFLOW {
            return None;
        }
        if step <= RICCATI_TOL * (1.0 + p.norm()) {
            return Some(p);
        }
    }
    None
}

/// Policy-iteration refinement: `P ← dlyap(A+BK, Q+KᵀRK)`, `K ← K(P)`.
fn hewer_refine(theta: &SystemParams, cm: &CostModel, mut k: Mat, steps: usize) -> Option<(Mat, Mat)> {
    let mut p = None;
    for _ in 0..steps {
        let acl = theta.a() + theta.b() * &k;
        if !is_stable_radius(spectral_radius(&acl).ok()?) {
            return None;
        }
        let pk = dlyap_stable(&acl, &(cm.q() + k.transpose() * cm.r() * &k)).ok()?;
        k = gain_from_value(theta, cm, &pk)?;
        p = Some(pk);
    }
    p.map(|p| (p, k))
}

fn accept(theta: &SystemParams, cm: &CostModel, p: Mat) -> Option<RiccatiSolution> {
    let k = gain_from_value(theta, cm, &p)?;
    let (p, k) = hewer_refine(theta, cm, k, 2)?;
    let residual = dare_residual(theta, cm, &p);
    let acl = theta.a() + theta.b() * &k;
    let stable = is_stable_radius(spectral_radius(&acl).ok()?);
    if stable && residual <= DARE_RESIDUAL_TOL * (1.0 + opnorm(&p)) {
        Some(RiccatiSolution { p, k: Gain(k), residual })
    } else {
        None
    }
}

/// Stabilizing solution of the DARE and the LQR-optimal gain `K(θ)`.
pub fn dare_solve(theta: &SystemParams, cm: &CostModel) -> Result<RiccatiSolution> {
    cm.check_against(theta)?;
    if let Some(sol) = sda(theta, cm).and_then(|p| accept(theta, cm, p)) {
        return Ok(sol);
    }
    riccati_recursion(theta, cm)
        .and_then(|p| accept(theta, cm, p))
        .ok_or(Error::NotStabilizable("Riccati iteration diverged or did not converge"))
}

/// The LQR-optimal gain `K(θ)`.
pub fn optimal_gain(theta: &SystemParams, cm: &CostModel) -> Result<Gain> {
    dare_solve(theta, cm).map(|s| s.k)
}

/// `Ψ(θ) = Bᵀ P(θ) B + R`.
pub fn psi(theta: &SystemParams, cm: &CostModel, p: &Mat) -> Mat {
    symmetrize(&(theta.b().transpose() * p * theta.b() + cm.r()))
}

/// Closed-loop state covariance `Σ^K(θ) = dlyap((A+BK)ᵀ, Σw)`.
pub fn state_covariance(k: &Gain, theta: &SystemParams, cm: &CostModel) -> Result<Mat> {
    cm.check_against(theta)?;
    let acl = theta.closed_loop(k)?;
    dlyap(&acl.transpose(), cm.sigma_w())
}

/// Average cost `trace(P_K Σw)`, or `Infinite` for a destabilizing gain.
pub fn lqr_cost(k: &Gain, theta: &SystemParams, cm: &CostModel) -> Result<Cost> {
    cm.check_against(theta)?;
    let acl = theta.closed_loop(k)?;
    let rho = spectral_radius(&acl)?;
    if !is_stable_radius(rho) {
        return Ok(Cost::Infinite);
    }
    let km = k.matrix();
    let pk = dlyap_stable(&acl, &(cm.q() + km.transpose() * cm.r() * km))?;
    Ok(Cost::Finite((&pk * cm.sigma_w()).trace()))
}

/// `C(K, θ) − C(K(θ), θ)`, clamped at zero.
pub fn excess_cost(k: &Gain, theta: &SystemParams, cm: &CostModel) -> Result<Cost> {
    let opt = dare_solve(theta, cm)?;
    let optimal = lqr_cost(&opt.k, theta, cm)?.value();
    excess_given_optimum(k, theta, cm, optimal)
}

/// Excess cost against a precomputed optimal cost.
pub(crate) fn excess_given_optimum(
    k: &Gain,
    theta: &SystemParams,
    cm: &CostModel,
    optimal: f64,
) -> Result<Cost> {
    Ok(match lqr_cost(k, theta, cm)? {
        Cost::Finite(c) => Cost::Finite((c - optimal).max(0.0)),
        Cost::Infinite => Cost::Infinite,
    })
}

/// `trace((K−K(θ)) Σ^K(θ) (K−K(θ))ᵀ Ψ(θ))`, the exact excess cost of a
/// stabilizing gain.
pub fn performance_difference(k: &Gain, theta: &SystemParams, cm: &CostModel) -> Result<f64> {
    let sigma = state_covariance(k, theta, cm)?;
    let opt = dare_solve(theta, cm)?;
    Ok(performance_difference_with(k, &opt, theta, cm, &sigma))
}

pub(crate) fn performance_difference_with(
    k: &Gain,
    opt: &RiccatiSolution,
    theta: &SystemParams,
    cm: &CostModel,
    sigma: &Mat,
) -> f64 {
    let dk = k.matrix() - opt.k.matrix();
    let psi = psi(theta, cm, &opt.p);
    (&dk * sigma * dk.transpose() * psi).trace()
}

/// Gradient of `K ↦ C(K, θ)`:
/// `2((R + BᵀP_K B)K + BᵀP_K A) Σ^K(θ)`.
pub fn policy_gradient(k: &Gain, theta: &SystemParams, cm: &CostModel) -> Result<Mat> {
    cm.check_against(theta)?;
    let acl = theta.closed_loop(k)?;
    let rho = spectral_radius(&acl)?;
    if !is_stable_radius(rho) {
        return Err(Error::Unstable(rho));
    }
    Ok(cost_and_gradient_stable(k.matrix(), &acl, theta, cm)?.1)
}

/// Cost and gradient at `K`, or `None` when `A + BK` is not stable.
pub(crate) fn cost_and_gradient(
    k: &Mat,
    theta: &SystemParams,
    cm: &CostModel,
) -> Result<Option<(f64, Mat)>> {
    let acl = theta.a() + theta.b() * k;
    if !is_stable_radius(spectral_radius(&acl)?) {
        return Ok(None);
    }
    cost_and_gradient_stable(k, &acl, theta, cm).map(Some)
}

fn cost_and_gradient_stable(
    k: &Mat,
    acl: &Mat,
    theta: &SystemParams,
    cm: &CostModel,
) -> Result<(f64, Mat)> {
    let (a, b) = (theta.a(), theta.b());
    let pk = dlyap_stable(acl, &(cm.q() + k.transpose() * cm.r() * k))?;
    let sigma = dlyap_stable(&acl.transpose(), cm.sigma_w())?;
    let bt_p = b.transpose() * &pk;
    let e = (cm.r() + &bt_p * b) * k + bt_p * a;
    let cost = (&pk * cm.sigma_w()).trace();
    Ok((cost, e * sigma * 2.0))
}
