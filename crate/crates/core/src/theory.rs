//! The model-task Hessian, efficiency leading terms and executable
//! perturbation inequalities.
//!
//! `H(θ) = D vec K(θ)ᵀ (Σ^{K(θ)}(θ) ⊗ Ψ(θ)) D vec K(θ)` is the matrix of the
//! quadratic form `Δ ↦ C(K(θ+Δ), θ) − C(K(θ), θ)` to second order, i.e. half
//! the Hessian of `θ' ↦ C(K(θ'), θ)` at `θ' = θ`. The Kronecker order follows
//! from `trace(MΣMᵀΨ) = vec(M)ᵀ(Σ⊗Ψ)vec(M)` under column stacking.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{max_sym_eigenvalue, min_sym_eigenvalue, opnorm, spectral_radius, symmetrize, vec_cols, Mat, Vector};
use crate::lqr::{dare_solve, lqr_cost, psi, state_covariance, Cost, CostModel, Gain, RiccatiSolution, SystemParams};
use crate::sysid::{simulate, unit_ball_point, FisherEstimate, GramAccumulator};
use crate::rng;

/// Relative step of the gain Jacobian.
pub const JACOBIAN_STEP: f64 = 1e-6;
/// Absolute step of the finite-difference Hessian.
pub const HESSIAN_STEP: f64 = 1e-4;

fn vec_gain(theta: &SystemParams, cm: &CostModel) -> Result<Vector> {
    Ok(vec_cols(dare_solve(theta, cm)?.k.matrix()))
}

fn jacobian_with_step(theta: &SystemParams, cm: &CostModel, h: f64) -> Result<Mat> {
    let d = theta.dtheta();
    let rows = theta.dx() * theta.du();
    let central = |step: f64, i: usize| -> Result<Vector> {
        let mut e = alloc::vec![0.0; d];
        e[i] = step;
        let plus = vec_gain(&theta.perturbed(&e)?, cm)?;
        e[i] = -step;
        let minus = vec_gain(&theta.perturbed(&e)?, cm)?;
        Ok((plus - minus) / (2.0 * step))
    };
    let mut jac = Mat::zeros(rows, d);
    for i in 0..d {
        let coarse = central(h, i)?;
        let fine = central(0.5 * h, i)?;
        jac.set_column(i, &((fine * 4.0 - coarse) / 3.0));
    }
    Ok(jac)
}

/// `D_θ vec K(θ)` by Richardson-refined central differences.
///
/// The step is `1e-6·max(1, ‖θ‖)`; if a perturbed model is not
/// stabilizable the step is reduced tenfold once.
pub fn gain_jacobian(theta: &SystemParams, cm: &CostModel) -> Result<Mat> {
    dare_solve(theta, cm)?;
    let h = JACOBIAN_STEP * theta.flatten().norm().max(1.0);
    match jacobian_with_step(theta, cm, h) {
        Err(Error::NotStabilizable(_)) => jacobian_with_step(theta, cm, 0.1 * h),
        other => other,
    }
}

/// How a [`ModelTaskHessian`] was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HessianMethod {
    Analytic,
    FiniteDifference,
}

impl fmt::Display for HessianMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HessianMethod::Analytic => "analytic",
            HessianMethod::FiniteDifference => "finite-difference",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelTaskHessian {
    pub h: Mat,
    pub method: HessianMethod,
}

impl ModelTaskHessian {
    /// `ΔᵀHΔ`, the second-order excess cost of `K(θ+Δ)`.
    pub fn quadratic_form(&self, delta: &Vector) -> f64 {
        delta.dot(&(&self.h * delta))
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_sym_eigenvalue(&self.h)
    }

    pub fn is_psd(&self, rel_tol: f64) -> bool {
        self.min_eigenvalue() >= -rel_tol * opnorm(&self.h)
    }
}

/// Analytic model-task Hessian `Jᵀ (Σ ⊗ Ψ) J`.
pub fn model_task_hessian(theta: &SystemParams, cm: &CostModel) -> Result<ModelTaskHessian> {
    let sol = dare_solve(theta, cm)?;
    let jac = gain_jacobian(theta, cm)?;
    let sigma = state_covariance(&sol.k, theta, cm)?;
    let mid = sigma.kronecker(&psi(theta, cm, &sol.p));
    let h = symmetrize(&(jac.transpose() * mid * &jac));
    Ok(ModelTaskHessian { h, method: HessianMethod::Analytic })
}

fn ce_cost_on(theta_prime: &SystemParams, theta: &SystemParams, cm: &CostModel) -> Result<f64> {
    let k = dare_solve(theta_prime, cm)?.k;
    match lqr_cost(&k, theta, cm)? {
        Cost::Finite(c) => Ok(c),
        Cost::Infinite => Err(Error::NotStabilizable("perturbed gain destabilizes the nominal model")),
    }
}

fn second_differences(theta: &SystemParams, cm: &CostModel, h: f64) -> Result<Mat> {
    let d = theta.dtheta();
    let g = |steps: &[(usize, f64)]| -> Result<f64> {
        let mut e = alloc::vec![0.0; d];
        for &(i, s) in steps {
            e[i] += s;
        }
        ce_cost_on(&theta.perturbed(&e)?, theta, cm)
    };
    let g0 = g(&[])?;
    let mut hess = Mat::zeros(d, d);
    for i in 0..d {
        let plus = g(&[(i, h)])?;
        let minus = g(&[(i, -h)])?;
        hess[(i, i)] = (plus - 2.0 * g0 + minus) / (h * h);
        for j in 0..i {
            let pp = g(&[(i, h), (j, h)])?;
            let pm = g(&[(i, h), (j, -h)])?;
            let mp = g(&[(i, -h), (j, h)])?;
            let mm = g(&[(i, -h), (j, -h)])?;
            let v = (pp - pm - mp + mm) / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    Ok(hess)
}

/// Full Hessian of `θ' ↦ C(K(θ'), θ)` at `θ' = θ` by Richardson-refined
/// central second differences with step `h`.
pub fn ce_cost_hessian_fd(theta: &SystemParams, cm: &CostModel, h: f64) -> Result<Mat> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    let coarse = second_differences(theta, cm, h)?;
    let fine = second_differences(theta, cm, 0.5 * h)?;
    Ok(symmetrize(&((fine * 4.0 - coarse) / 3.0)))
}

/// Model-task Hessian from second differences: half the Hessian of the CE cost.
pub fn model_task_hessian_fd(theta: &SystemParams, cm: &CostModel) -> Result<ModelTaskHessian> {
    let h = ce_cost_hessian_fd(theta, cm, HESSIAN_STEP)? * 0.5;
    Ok(ModelTaskHessian { h, method: HessianMethod::FiniteDifference })
}

/// Monte Carlo `E[Σ_t z_t z_tᵀ] ⊗ Σw⁻¹` over `mc_trajectories` rollouts.
///
/// Rollout `i` uses sub-stream `i` of `seed`, the same streams
/// [`crate::sysid::collect_dataset`] uses.
pub fn population_fisher(
    theta: &SystemParams,
    cm: &CostModel,
    horizon: usize,
    sigma_u: &Mat,
    mc_trajectories: usize,
    seed: u64,
) -> Result<FisherEstimate> {
    if mc_trajectories == 0 {
        return Err(Error::InvalidArgument("Monte Carlo Fisher needs at least one rollout".into()));
    }
    let mut acc = GramAccumulator::new(theta.dx() + theta.du());
    for i in 0..mc_trajectories as u64 {
        acc.push(&simulate(theta, cm, horizon, sigma_u, &mut rng::stream(seed, &[i]))?);
    }
    FisherEstimate::from_gram(&acc, cm)
}

/// Leading excess-cost terms of the three methods.
#[derive(Clone, Debug, PartialEq)]
pub struct LeadingTerms {
    /// `trace(H FI⁻¹)/N`.
    pub ce_dr_term: f64,
    /// `dθ ‖H FI⁻¹‖/N`.
    pub rc_term: f64,
    pub n: usize,
    pub dtheta: usize,
}

/// Solves `FI X = H` by Cholesky.
fn fisher_solve(h: &Mat, fi: &Mat) -> Result<Mat> {
    if h.shape() != fi.shape() || !fi.is_square() {
        return Err(Error::Dimension("H and FI must be square of equal size".into()));
    }
    let chol = symmetrize(fi).cholesky().ok_or(Error::SingularFisher)?;
    let x = chol.solve(h);
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::SingularFisher)
    }
}

pub fn leading_terms(h: &Mat, fi: &Mat, n: usize) -> Result<LeadingTerms> {
    if n == 0 {
        return Err(Error::InvalidArgument("number of experiments must be positive".into()));
    }
    let x = fisher_solve(h, fi)?;
    let d = h.nrows();
    Ok(LeadingTerms {
        ce_dr_term: x.trace() / n as f64,
        rc_term: d as f64 * opnorm(&x) / n as f64,
        n,
        dtheta: d,
    })
}

/// Right-hand side `4 trace(H FI⁻¹)/N + 8‖H FI⁻¹‖ ln(2/δ)/N` of the
/// weighted least-squares error bound.
pub fn identification_bound(h: &Mat, fi: &Mat, n: usize, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidDelta(delta));
    }
    let terms = leading_terms(h, fi, n)?;
    let opnorm_term = terms.rc_term / terms.dtheta as f64;
    Ok(4.0 * terms.ce_dr_term + 8.0 * opnorm_term * libm::log(2.0 / delta))
}

/// One evaluated inequality. `margin` is `1 − lhs/rhs` (or an analogous
/// signed slack); the check passes when the margin is nonnegative up to
/// rounding.
#[derive(Clone, Debug, PartialEq)]
pub struct InequalityCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub pass: bool,
}

const CHECK_TOL: f64 = 1e-9;

impl InequalityCheck {
    fn le(name: &str, lhs: f64, rhs: f64) -> Self {
        let margin = if rhs > 0.0 { 1.0 - lhs / rhs } else if lhs <= 0.0 { 0.0 } else { f64::NEG_INFINITY };
        let margin = if margin.is_nan() { f64::NEG_INFINITY } else { margin };
        Self { name: name.into(), lhs, rhs, margin, pass: margin >= -CHECK_TOL }
    }

    fn merge_worst(&mut self, other: Self) {
        if other.margin < self.margin {
            *self = other;
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct InequalityReport {
    pub checks: Vec<InequalityCheck>,
}

impl InequalityReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &InequalityCheck> {
        self.checks.iter().filter(|c| !c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&InequalityCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Records `check`, keeping the worst margin per name.
    pub fn record(&mut self, check: InequalityCheck) {
        match self.checks.iter_mut().find(|c| c.name == check.name) {
            Some(existing) => existing.merge_worst(check),
            None => self.checks.push(check),
        }
    }
}

/// Names of the checks that hold at a single stabilizable parameter.
pub const NOMINAL_CHECKS: [&str; 5] = [
    "sigma_le_p",
    "closed_loop_le_sqrt_p",
    "gain_le_sqrt_p",
    "psi_le_2tau2_p",
    "psi_kron_sigma_le_2tau2_p2",
];

/// Names of the checks on perturbations of radius `‖P‖⁻⁵/256`.
pub const CE_STABILIZATION_CHECKS: [&str; 3] =
    ["ce_perturbed_stabilizable", "ce_gain_stabilizes_nominal", "ce_sigma_le_2p"];

/// Names of the checks on perturbations of radius `‖P‖⁻²/16`.
pub const RICCATI_CHECKS: [&str; 5] = [
    "riccati_perturbed_stabilizable",
    "riccati_p_le_sqrt2_p",
    "riccati_gain_shift",
    "riccati_b_gain_shift",
    "riccati_value_shift",
];

fn check_preconditions(theta: &SystemParams, cm: &CostModel) -> Result<()> {
    if cm.dx() != theta.dx() || cm.du() != theta.du() {
        return Err(Error::Dimension("cost model does not match the system".into()));
    }
    if min_sym_eigenvalue(cm.q()) < 1.0 - 1e-10 {
        return Err(Error::PreconditionViolated("Q must satisfy Q ⪰ I"));
    }
    let eye_u = Mat::identity(cm.du(), cm.du());
    let eye_x = Mat::identity(cm.dx(), cm.dx());
    if (cm.r() - eye_u).amax() > 1e-12 {
        return Err(Error::PreconditionViolated("R must equal I"));
    }
    if (cm.sigma_w() - eye_x).amax() > 1e-12 {
        return Err(Error::PreconditionViolated("Σw must equal I"));
    }
    Ok(())
}

fn nominal_checks(theta: &SystemParams, cm: &CostModel, sol: &RiccatiSolution, report: &mut InequalityReport) -> Result<()> {
    let p = opnorm(&sol.p);
    let sigma = state_covariance(&sol.k, theta, cm)?;
    let s = max_sym_eigenvalue(&sigma);
    let tau = opnorm(theta.b()).max(1.0);
    let psi_norm = max_sym_eigenvalue(&psi(theta, cm, &sol.p));
    let sqrt_p = libm::sqrt(p);
    report.record(InequalityCheck::le(NOMINAL_CHECKS[0], s, p));
    report.record(InequalityCheck::le(NOMINAL_CHECKS[1], opnorm(&theta.closed_loop(&sol.k)?), sqrt_p));
    report.record(InequalityCheck::le(NOMINAL_CHECKS[2], opnorm(sol.k.matrix()), sqrt_p));
    report.record(InequalityCheck::le(NOMINAL_CHECKS[3], psi_norm, 2.0 * tau * tau * p));
    report.record(InequalityCheck::le(NOMINAL_CHECKS[4], psi_norm * s, 2.0 * tau * tau * p * p));
    Ok(())
}

fn direction<R: Rng + ?Sized>(rng: &mut R, d: usize, radius: f64) -> Vector {
    let mut w = unit_ball_point(rng, d);
    w /= w.norm();
    w * radius
}

fn stabilizable_check(name: &str, solved: &Result<RiccatiSolution>, theta: &SystemParams) -> InequalityCheck {
    let rho = match solved {
        Ok(sol) => theta.closed_loop(&sol.k).and_then(|m| spectral_radius(&m)).unwrap_or(f64::INFINITY),
        Err(_) => f64::INFINITY,
    };
    InequalityCheck::le(name, rho, 1.0)
}

fn ce_stabilization_checks(
    theta: &SystemParams,
    cm: &CostModel,
    p_norm: f64,
    delta: &Vector,
    report: &mut InequalityReport,
) -> Result<()> {
    let theta2 = theta.perturbed(delta.as_slice())?;
    let solved = dare_solve(&theta2, cm);
    report.record(stabilizable_check(CE_STABILIZATION_CHECKS[0], &solved, &theta2));
    let Ok(sol2) = solved else {
        report.record(InequalityCheck::le(CE_STABILIZATION_CHECKS[1], f64::INFINITY, 1.0));
        report.record(InequalityCheck::le(CE_STABILIZATION_CHECKS[2], f64::INFINITY, 2.0 * p_norm));
        return Ok(());
    };
    let rho = spectral_radius(&theta.closed_loop(&sol2.k)?)?;
    report.record(InequalityCheck::le(CE_STABILIZATION_CHECKS[1], rho, 1.0));
    let sigma = if rho < 1.0 { max_sym_eigenvalue(&state_covariance(&sol2.k, theta, cm)?) } else { f64::INFINITY };
    report.record(InequalityCheck::le(CE_STABILIZATION_CHECKS[2], sigma, 2.0 * p_norm));
    Ok(())
}

fn riccati_checks(
    theta: &SystemParams,
    cm: &CostModel,
    sol: &RiccatiSolution,
    delta: &Vector,
    report: &mut InequalityReport,
) -> Result<()> {
    let p = opnorm(&sol.p);
    let dist = delta.norm();
    let theta2 = theta.perturbed(delta.as_slice())?;
    let solved = dare_solve(&theta2, cm);
    report.record(stabilizable_check(RICCATI_CHECKS[0], &solved, &theta2));
    let (p2, dk, bdk, dp) = match &solved {
        Ok(sol2) => {
            let dk = sol2.k.matrix() - sol.k.matrix();
            (opnorm(&sol2.p), opnorm(&dk), opnorm(&(theta.b() * &dk)), opnorm(&(&sol2.p - &sol.p)))
        }
        Err(_) => (f64::INFINITY, f64::INFINITY, f64::INFINITY, f64::INFINITY),
    };
    let p72 = libm::pow(p, 3.5);
    report.record(InequalityCheck::le(RICCATI_CHECKS[1], p2, core::f64::consts::SQRT_2 * p));
    report.record(InequalityCheck::le(RICCATI_CHECKS[2], dk, 32.0 * p72 * dist));
    report.record(InequalityCheck::le(RICCATI_CHECKS[3], bdk, 32.0 * p72 * dist));
    report.record(InequalityCheck::le(RICCATI_CHECKS[4], dp, 8.0 * core::f64::consts::SQRT_2 * p * p * p * dist));
    Ok(())
}

/// Radius `‖P‖⁻⁵/256` of the certainty-equivalent stabilization region.
pub fn ce_stabilization_radius(p_norm: f64) -> f64 {
    libm::pow(p_norm, -5.0) / 256.0
}

/// Radius `‖P‖⁻²/16` of the Riccati perturbation region.
pub fn riccati_radius(p_norm: f64) -> f64 {
    1.0 / (16.0 * p_norm * p_norm)
}

/// Evaluates the perturbation inequalities at `θ` and at `n_perturb`
/// random perturbations on the boundary of each perturbation region.
///
/// Each named check reports its worst margin over all evaluations; a
/// violated inequality is reported, not raised.
pub fn inequality_suite<R: Rng + ?Sized>(
    theta: &SystemParams,
    cm: &CostModel,
    n_perturb: usize,
    rng: &mut R,
) -> Result<InequalityReport> {
    check_preconditions(theta, cm)?;
    let sol = dare_solve(theta, cm)?;
    let p = opnorm(&sol.p);
    let mut report = InequalityReport::default();
    nominal_checks(theta, cm, &sol, &mut report)?;
    let d = theta.dtheta();
    for _ in 0..n_perturb {
        let delta = direction(rng, d, ce_stabilization_radius(p));
        ce_stabilization_checks(theta, cm, p, &delta, &mut report)?;
        let delta = direction(rng, d, riccati_radius(p));
        riccati_checks(theta, cm, &sol, &delta, &mut report)?;
    }
    Ok(report)
}

/// `‖D vec K(θ)‖ ≤ 24 ‖P(θ)‖^{7/2}`.
pub fn gain_jacobian_check(theta: &SystemParams, cm: &CostModel) -> Result<InequalityCheck> {
    let p = opnorm(&dare_solve(theta, cm)?.p);
    let jac = gain_jacobian(theta, cm)?;
    Ok(InequalityCheck::le("gain_jacobian_le_24_p72", opnorm(&jac), 24.0 * libm::pow(p, 3.5)))
}

/// Excess cost of `K(θ+Δ)` on `θ`, evaluated through the performance
/// difference identity.
pub fn ce_excess(theta: &SystemParams, delta: &Vector, cm: &CostModel) -> Result<Cost> {
    let k: Gain = dare_solve(&theta.perturbed(delta.as_slice())?, cm)?.k;
    crate::lqr::excess_cost(&k, theta, cm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::unvec_cols;
    use crate::lqr::optimal_gain;
    use crate::test_util::{paper_system, random_instance, randn, scalar};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn paper_system_q_identity() -> (SystemParams, CostModel) {
        let (theta, _) = paper_system();
        (theta, CostModel::scaled_identity(3, 3, 1.0).unwrap())
    }

    #[test]
    fn kronecker_order_matches_trace_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let (du, dx) = (2, 3);
            let m = randn(&mut rng, du, dx);
            let ls = randn(&mut rng, dx, dx);
            let lp = randn(&mut rng, du, du);
            let sigma = &ls * ls.transpose() + Mat::identity(dx, dx);
            let psi = &lp * lp.transpose() + Mat::identity(du, du);
            let lhs = (&m * &sigma * m.transpose() * &psi).trace();
            let v = vec_cols(&m);
            let rhs = v.dot(&(sigma.kronecker(&psi) * &v));
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
            let wrong = v.dot(&(psi.kronecker(&sigma) * &v));
            assert!((lhs - wrong).abs() > 1e-6);
        }
    }

    #[test]
    fn scalar_gain_derivative_matches_richardson_oracle() {
        let cm = CostModel::new(scalar(1.0), scalar(1.0), scalar(1.0)).unwrap();
        let theta = SystemParams::new(scalar(0.5), scalar(1.0)).unwrap();
        let jac = gain_jacobian(&theta, &cm).unwrap();
        // closed-form scalar gain: p² − a²p − 1 = 0, k = −a p/(1+p)
        let k_of = |a: f64| {
            let p = (a * a + libm::sqrt(a * a * a * a + 4.0)) / 2.0;
            -a * p / (1.0 + p)
        };
        let d = |h: f64| (k_of(0.5 + h) - k_of(0.5 - h)) / (2.0 * h);
        let oracle = (4.0 * d(5e-4) - d(1e-3)) / 3.0;
        assert!((jac[(0, 0)] - oracle).abs() <= 1e-6, "{} vs {}", jac[(0, 0)], oracle);
        assert_eq!(jac.shape(), (1, 2));
    }

    #[test]
    fn gain_jacobian_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let (theta, cm) = random_instance(&mut rng, 3, 2);
            let check = gain_jacobian_check(&theta, &cm).unwrap();
            assert!(check.pass, "{check:?}");
        }
    }

    #[test]
    fn analytic_and_fd_hessians_agree_on_paper_system() {
        let (theta, cm) = paper_system();
        let analytic = model_task_hessian(&theta, &cm).unwrap();
        let fd = model_task_hessian_fd(&theta, &cm).unwrap();
        let rel = (&analytic.h - &fd.h).norm() / analytic.h.norm();
        assert!(rel <= 1e-3, "relative error {rel}");
        assert!(analytic.is_psd(1e-8));
        assert_eq!(fd.method, HessianMethod::FiniteDifference);
    }

    #[test]
    fn hessian_psd_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let (theta, cm) = random_instance(&mut rng, 3, 2);
            let h = model_task_hessian(&theta, &cm).unwrap();
            assert!(h.is_psd(1e-8), "min eig {}", h.min_eigenvalue());
        }
    }

    #[test]
    fn quadratic_form_predicts_ce_excess() {
        let (theta, cm) = paper_system();
        let h = model_task_hessian(&theta, &cm).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut dir = unit_ball_point(&mut rng, 18);
        dir /= dir.norm();
        for eps in [1e-3, 1e-4] {
            let delta = &dir * eps;
            let exact = ce_excess(&theta, &delta, &cm).unwrap().value();
            let ratio = exact / h.quadratic_form(&delta);
            assert!((ratio - 1.0).abs() < 0.05, "eps {eps}: ratio {ratio}");
        }
    }

    #[test]
    fn population_fisher_zero_excitation() {
        let theta = SystemParams::new(scalar(0.5), scalar(1.0)).unwrap();
        let cm = CostModel::new(scalar(1.0), scalar(1.0), scalar(1.0)).unwrap();
        let fi = population_fisher(&theta, &cm, 5, &scalar(0.0), 20, 1).unwrap();
        // noise still drives the state block; the input block is zero
        assert!(fi.gram[(1, 1)] == 0.0 && fi.gram[(0, 1)] == 0.0);
        assert!(fi.gram[(0, 0)] > 0.0);
    }

    #[test]
    fn population_fisher_matches_transient_moments() {
        let (a, t) = (0.8, 6usize);
        let theta = SystemParams::new(scalar(a), scalar(1.0)).unwrap();
        let cm = CostModel::new(scalar(1.0), scalar(1.0), scalar(1.0)).unwrap();
        let fi = population_fisher(&theta, &cm, t, &scalar(1.0), 100_000, 9).unwrap();
        let (mut ex2, mut sum) = (0.0, 0.0);
        for _ in 0..t {
            sum += ex2;
            ex2 = a * a * ex2 + 2.0;
        }
        assert!((fi.gram[(0, 0)] - sum).abs() <= 0.02 * sum, "{} vs {sum}", fi.gram[(0, 0)]);
        assert!((fi.gram[(1, 1)] - t as f64).abs() <= 0.02 * t as f64);
        assert!(fi.gram_std_error[(0, 0)] > 0.0);
    }

    #[test]
    fn population_fisher_equals_dataset_estimate() {
        let (theta, cm) = paper_system();
        let eye = Mat::identity(3, 3);
        let pop = population_fisher(&theta, &cm, 10, &eye, 25, 77).unwrap();
        let ds = crate::sysid::collect_dataset(&theta, &cm, 25, 10, &eye, 77).unwrap();
        let est = crate::sysid::fisher_estimate(&ds, &cm).unwrap();
        assert_eq!(pop.matrix, est.matrix);
    }

    #[test]
    fn leading_terms_examples() {
        let d = 5;
        let fi = Mat::identity(d, d) * 2.0;
        let t = leading_terms(&fi, &fi, 10).unwrap();
        assert!((t.ce_dr_term - 0.5).abs() < 1e-12 && (t.rc_term - 0.5).abs() < 1e-12);
        let mut h = Mat::zeros(d, d);
        h[(0, 0)] = 1.0;
        let t = leading_terms(&h, &Mat::identity(d, d), 10).unwrap();
        assert!((t.ce_dr_term - 0.1).abs() < 1e-12 && (t.rc_term - 0.5).abs() < 1e-12);
        assert_eq!(leading_terms(&h, &Mat::zeros(d, d), 10), Err(Error::SingularFisher));
    }

    #[test]
    fn leading_terms_ordering_on_random_psd_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let d = 6;
            let l = randn(&mut rng, d, 3);
            let m = randn(&mut rng, d, d);
            let h = &l * l.transpose();
            let fi = &m * m.transpose() + Mat::identity(d, d) * 0.1;
            let t = leading_terms(&h, &fi, 7).unwrap();
            assert!(t.ce_dr_term <= t.rc_term * (1.0 + 1e-10));
        }
    }

    #[test]
    fn suite_passes_on_paper_system_with_unit_q() {
        let (theta, cm) = paper_system_q_identity();
        let report = inequality_suite(&theta, &cm, 10, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(report.all_pass(), "{:?}", report.failures().collect::<Vec<_>>());
        for name in NOMINAL_CHECKS.iter().chain(&CE_STABILIZATION_CHECKS).chain(&RICCATI_CHECKS) {
            assert!(report.get(name).is_some(), "missing {name}");
        }
    }

    #[test]
    fn suite_reports_violations_instead_of_failing() {
        // controllability and observability Gramians differ in norm here
        let a = Mat::from_row_slice(
            3,
            3,
            &[
                0.9041218769144346, 0.6645764933046526, -0.4201642949218513,
                -1.1934941548560976, 0.7892757059264707, 1.2755729762727959,
                0.34568428664388395, -0.4558531324330373, -0.36938982374295654,
            ],
        );
        let b = Mat::from_column_slice(3, 1, &[-1.1033806027322997, -1.036693951087397, -0.9842705504883935]);
        let q = Mat::from_row_slice(
            3,
            3,
            &[
                1.213665051719244, 0.0406861230932448, -0.11836904339470186,
                0.0406861230932448, 1.167427314360411, 0.21809731497313856,
                -0.11836904339470186, 0.21809731497313856, 1.572887969977735,
            ],
        );
        let theta = SystemParams::new(a, b).unwrap();
        let cm = CostModel::new(q, Mat::identity(1, 1), Mat::identity(3, 3)).unwrap();
        let report = inequality_suite(&theta, &cm, 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let check = report.get(NOMINAL_CHECKS[0]).unwrap();
        assert!(!check.pass);
        assert!(check.lhs > 13.78 && check.rhs < 12.70, "{check:?}");
        assert!(!report.all_pass());
    }

    #[test]
    fn suite_rejects_violated_preconditions() {
        let (theta, cm) = paper_system();
        assert!(matches!(
            inequality_suite(&theta, &cm, 1, &mut ChaCha8Rng::seed_from_u64(1)),
            Err(Error::PreconditionViolated(_))
        ));
        let cm = CostModel::new(Mat::identity(3, 3), Mat::identity(3, 3) * 2.0, Mat::identity(3, 3)).unwrap();
        assert!(matches!(
            inequality_suite(&theta, &cm, 1, &mut ChaCha8Rng::seed_from_u64(1)),
            Err(Error::PreconditionViolated(_))
        ));
    }

    #[test]
    fn gain_norm_bound_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            let (theta, cm) = random_instance(&mut rng, 4, 3);
            let sol = dare_solve(&theta, &cm).unwrap();
            assert!(opnorm(sol.k.matrix()) <= libm::sqrt(opnorm(&sol.p)) * (1.0 + 1e-9));
        }
    }

    #[test]
    fn jacobian_columns_follow_flat_layout() {
        let (theta, cm) = paper_system();
        let jac = gain_jacobian(&theta, &cm).unwrap();
        // column 9 perturbs B[0,0]; compare with a direct difference
        let mut e = alloc::vec![0.0; 18];
        e[9] = 1e-5;
        let kp = optimal_gain(&theta.perturbed(&e).unwrap(), &cm).unwrap();
        e[9] = -1e-5;
        let km = optimal_gain(&theta.perturbed(&e).unwrap(), &cm).unwrap();
        let direct = (kp.matrix() - km.matrix()) / 2e-5;
        let col = unvec_cols(jac.column(9).as_slice(), 3, 3).unwrap();
        assert!((col - direct).amax() < 1e-5);
    }
}
