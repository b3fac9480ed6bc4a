//! Torque-driven pendulum with unknown `(m, l, g)`: simulation, nonlinear
//! least-squares identification and cross-entropy receding-horizon control.
//!
//! Dynamics (semi-implicit Euler, `ψ = 0` upright):
//! `ψ̇⁺ = ψ̇ + dt((g/l) sin ψ + τ/(m l²))`, `ψ⁺ = ψ + dt ψ̇⁺`.
//! Only the combinations `g/l` and `1/(m l²)` enter the dynamics.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

pub const DEFAULT_DT: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PendulumParams {
    pub m: f64,
    pub l: f64,
    pub g: f64,
}

impl PendulumParams {
    pub fn new(m: f64, l: f64, g: f64) -> Result<Self> {
        if [m, l, g].iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(Self { m, l, g })
        } else {
            Err(Error::InvalidArgument(format!("pendulum parameters must be positive, got ({m}, {l}, {g})")))
        }
    }

    /// `(1.0, 1.0, 9.81)`.
    pub fn truth() -> Self {
        Self { m: 1.0, l: 1.0, g: 9.81 }
    }

    /// `g/l`.
    pub fn gravity_ratio(&self) -> f64 {
        self.g / self.l
    }

    /// `1/(m l²)`.
    pub fn torque_gain(&self) -> f64 {
        1.0 / (self.m * self.l * self.l)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.m, self.l, self.g]
    }

    pub fn distance(&self, other: &Self) -> f64 {
        let d = [self.m - other.m, self.l - other.l, self.g - other.g];
        libm::sqrt(d.iter().map(|v| v * v).sum())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PendulumState {
    pub psi: f64,
    pub psi_dot: f64,
}

impl PendulumState {
    pub fn new(psi: f64, psi_dot: f64) -> Self {
        Self { psi, psi_dot }
    }

    pub fn upright() -> Self {
        Self::default()
    }

    pub fn downward() -> Self {
        Self { psi: PI, psi_dot: 0.0 }
    }
}

/// Wraps an angle to `(−π, π]`.
pub fn wrap_angle(psi: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut w = libm::fmod(psi + PI, two_pi);
    if w <= 0.0 {
        w += two_pi;
    }
    w - PI
}

/// `sin ψ` reduced about the nearer equilibrium, so that `sin π` is exactly 0.
#[inline]
fn sin_reduced(psi: f64) -> f64 {
    let w = wrap_angle(psi);
    if w > FRAC_PI_2 {
        libm::sin(PI - w)
    } else if w < -FRAC_PI_2 {
        -libm::sin(PI + w)
    } else {
        libm::sin(w)
    }
}

#[inline]
fn step_coeffs(s: PendulumState, torque: f64, alpha: f64, beta: f64, dt: f64) -> PendulumState {
    let psi_dot = s.psi_dot + dt * (alpha * sin_reduced(s.psi) + beta * torque);
    PendulumState { psi: s.psi + dt * psi_dot, psi_dot }
}

/// One integrator step under the total torque `τ` (action plus noise).
pub fn pendulum_step(s: PendulumState, torque: f64, p: &PendulumParams, dt: f64) -> PendulumState {
    step_coeffs(s, torque, p.gravity_ratio(), p.torque_gain(), dt)
}

/// `ψ² + 0.1ψ̇² + 2τ²` inside `|ψ| ≤ π/4` (after wrapping), `50` outside.
#[inline]
pub fn stage_cost(s: PendulumState, torque: f64) -> f64 {
    let psi = wrap_angle(s.psi);
    if (-FRAC_PI_4..=FRAC_PI_4).contains(&psi) {
        psi * psi + 0.1 * s.psi_dot * s.psi_dot + 2.0 * torque * torque
    } else {
        50.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PendulumTrajectory {
    pub states: Vec<PendulumState>,
    /// Commanded torques; the applied torque also carried unobserved noise.
    pub torques: Vec<f64>,
}

impl PendulumTrajectory {
    pub fn new(states: Vec<PendulumState>, torques: Vec<f64>) -> Result<Self> {
        if states.len() != torques.len() + 1 {
            return Err(Error::Dimension(format!(
                "pendulum trajectory has {} states and {} torques",
                states.len(),
                torques.len()
            )));
        }
        Ok(Self { states, torques })
    }

    pub fn transitions(&self) -> impl Iterator<Item = (PendulumState, f64, PendulumState)> + '_ {
        (0..self.torques.len()).map(|t| (self.states[t], self.torques[t], self.states[t + 1]))
    }
}

/// Rollout from `start` with `U_t ~ N(0, σu²)` and `W_t ~ N(0, σw²)` on the torque.
pub fn simulate_pendulum<R: Rng + ?Sized>(
    truth: &PendulumParams,
    start: PendulumState,
    len: usize,
    sigma_u: f64,
    sigma_w: f64,
    dt: f64,
    rng: &mut R,
) -> PendulumTrajectory {
    let mut states = Vec::with_capacity(len + 1);
    let mut torques = Vec::with_capacity(len);
    let mut s = start;
    states.push(s);
    for _ in 0..len {
        let u: f64 = sigma_u * rng.sample::<f64, _>(StandardNormal);
        let w: f64 = sigma_w * rng.sample::<f64, _>(StandardNormal);
        s = pendulum_step(s, u + w, truth, dt);
        torques.push(u);
        states.push(s);
    }
    PendulumTrajectory { states, torques }
}

/// `n` trajectories from the downward position; trajectory `i` uses
/// sub-stream `i` of `seed`.
pub fn collect_pendulum_data(
    truth: &PendulumParams,
    n: usize,
    len: usize,
    sigma_u: f64,
    sigma_w: f64,
    dt: f64,
    seed: u64,
) -> Vec<PendulumTrajectory> {
    (0..n as u64)
        .map(|i| {
            simulate_pendulum(truth, PendulumState::downward(), len, sigma_u, sigma_w, dt, &mut rng::stream(seed, &[i]))
        })
        .collect()
}

/// Gauss–Newton fit of `(m, l, g)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PendulumFit {
    pub params: PendulumParams,
    /// Root-mean-square one-step prediction residual.
    pub rms_residual: f64,
    pub iterations: usize,
    /// Numerical rank of the residual Jacobian at the solution (at most 2).
    pub jacobian_rank: usize,
}

pub const GN_INIT: PendulumParams = PendulumParams { m: 1.5, l: 1.5, g: 5.0 };
pub const GN_MAX_ITERS: usize = 200;

fn residuals(data: &[PendulumTrajectory], logp: &[f64; 3], dt: f64) -> DVector<f64> {
    let p = PendulumParams { m: libm::exp(logp[0]), l: libm::exp(logp[1]), g: libm::exp(logp[2]) };
    let n: usize = data.iter().map(|tr| tr.torques.len()).sum();
    let mut r = DVector::zeros(2 * n);
    let mut row = 0;
    for tr in data {
        for (s, u, next) in tr.transitions() {
            let pred = pendulum_step(s, u, &p, dt);
            r[row] = next.psi - pred.psi;
            r[row + 1] = next.psi_dot - pred.psi_dot;
            row += 2;
        }
    }
    r
}

fn fd_jacobian(data: &[PendulumTrajectory], logp: &[f64; 3], dt: f64) -> DMatrix<f64> {
    const H: f64 = 1e-6;
    let cols: Vec<DVector<f64>> = (0..3)
        .map(|j| {
            let mut plus = *logp;
            let mut minus = *logp;
            plus[j] += H;
            minus[j] -= H;
            (residuals(data, &plus, dt) - residuals(data, &minus, dt)) / (2.0 * H)
        })
        .collect();
    DMatrix::from_columns(&cols)
}

fn numerical_rank(sv: &DVector<f64>) -> usize {
    let smax = sv.iter().fold(0.0f64, |a, v| a.max(*v));
    sv.iter().filter(|s| **s > 1e-12 && **s > 1e-7 * smax).count()
}

/// Nonlinear least squares `argmin Σ‖X_{t+1} − f(X_t, U_t; θ)‖²` in
/// log-parameters, started from [`GN_INIT`].
///
/// Steps are minimum-norm Gauss–Newton steps (the residual is invariant
/// along one direction of `(log m, log l, log g)`), with backtracking.
pub fn identify_pendulum(data: &[PendulumTrajectory], dt: f64) -> Result<PendulumFit> {
    let n_transitions: usize = data.iter().map(|tr| tr.torques.len()).sum();
    if n_transitions == 0 {
        return Err(Error::NotIdentifiable(0));
    }
    let mut x = [libm::log(GN_INIT.m), libm::log(GN_INIT.l), libm::log(GN_INIT.g)];
    let mut r = residuals(data, &x, dt);
    let mut obj = r.norm_squared();
    let to_params = |x: &[f64; 3]| PendulumParams { m: libm::exp(x[0]), l: libm::exp(x[1]), g: libm::exp(x[2]) };
    for iter in 1..=GN_MAX_ITERS {
        let jac = fd_jacobian(data, &x, dt);
        let svd = jac.clone().svd(true, true);
        let rank = numerical_rank(&svd.singular_values);
        if iter == 1 && rank < 2 {
            return Err(Error::NotIdentifiable(rank));
        }
        let smax = svd.singular_values.max();
        if !(smax > 0.0) {
            return Err(Error::NotIdentifiable(0));
        }
        let step = svd
            .pseudo_inverse(1e-7 * smax)
            .map_err(|_| Error::NotIdentifiable(rank))?
            * &r;
        let grad = jac.transpose() * &r;
        if grad.norm() <= 1e-14 * (1.0 + obj) || step.norm() <= 1e-13 {
            return Ok(PendulumFit {
                params: to_params(&x),
                rms_residual: libm::sqrt(obj / r.len() as f64),
                iterations: iter,
                jacobian_rank: rank,
            });
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial = [x[0] - t * step[0], x[1] - t * step[1], x[2] - t * step[2]];
            let rt = residuals(data, &trial, dt);
            let ot = rt.norm_squared();
            if ot.is_finite() && ot < obj {
                let rel = (obj - ot) / obj.max(f64::MIN_POSITIVE);
                x = trial;
                r = rt;
                obj = ot;
                accepted = true;
                if rel <= 1e-15 {
                    accepted = false;
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Ok(PendulumFit {
                params: to_params(&x),
                rms_residual: libm::sqrt(obj / r.len() as f64),
                iterations: iter,
                jacobian_rank: rank,
            });
        }
    }
    let p = to_params(&x);
    Err(Error::IdentificationFailed { m: p.m, l: p.l, g: p.g })
}

/// Options of the cross-entropy planner.
#[derive(Clone, Debug, PartialEq)]
pub struct CemOptions {
    pub horizon: usize,
    pub population: usize,
    pub elites: usize,
    pub iterations: usize,
    pub init_std: f64,
    /// Number of sampled models for domain-randomized planning.
    pub model_samples: usize,
    pub torque_limit: f64,
    pub dt: f64,
}

impl Default for CemOptions {
    fn default() -> Self {
        Self {
            horizon: 20,
            population: 64,
            elites: 8,
            iterations: 8,
            init_std: 1.0,
            model_samples: 15,
            torque_limit: 3.0,
            dt: DEFAULT_DT,
        }
    }
}

impl CemOptions {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.population == 0 || self.iterations == 0 || self.model_samples == 0 {
            return Err(Error::InvalidArgument("CEM sizes must be positive".into()));
        }
        if self.elites == 0 || self.elites > self.population {
            return Err(Error::InvalidArgument(format!(
                "CEM elites must lie in 1..={}, got {}",
                self.population, self.elites
            )));
        }
        if !(self.init_std >= 0.0) || !(self.torque_limit > 0.0) || !(self.dt > 0.0) {
            return Err(Error::InvalidArgument("CEM std, torque limit and dt must be positive".into()));
        }
        Ok(())
    }
}

/// Mean over models of the summed stage cost of a noiseless rollout.
pub fn plan_cost(start: PendulumState, actions: &[f64], models: &[PendulumParams], dt: f64) -> f64 {
    let mut total = 0.0;
    for p in models {
        let (alpha, beta) = (p.gravity_ratio(), p.torque_gain());
        let mut s = start;
        for &u in actions {
            total += stage_cost(s, u);
            s = step_coeffs(s, u, alpha, beta, dt);
        }
    }
    total / models.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct CemPlan {
    pub actions: Vec<f64>,
    /// Mean elite cost after each iteration.
    pub elite_costs: Vec<f64>,
}

/// Cross-entropy planning from a zero initial mean.
pub fn cem_plan<R: Rng + ?Sized>(
    s: PendulumState,
    models: &[PendulumParams],
    opts: &CemOptions,
    rng: &mut R,
) -> Result<CemPlan> {
    cem_plan_from(s, models, &alloc::vec![0.0; opts.horizon], opts, rng)
}

/// Cross-entropy planning from the given initial mean sequence.
///
/// Each iteration samples `population` clamped Gaussian sequences, pools
/// them with the current mean and the previous elites, keeps the `elites` lowest-cost sequences
/// (ties broken by pool index) and refits the mean and standard deviation.
pub fn cem_plan_from<R: Rng + ?Sized>(
    s: PendulumState,
    models: &[PendulumParams],
    init_mean: &[f64],
    opts: &CemOptions,
    rng: &mut R,
) -> Result<CemPlan> {
    opts.validate()?;
    if models.is_empty() {
        return Err(Error::InvalidArgument("CEM needs at least one model".into()));
    }
    let h = opts.horizon;
    if init_mean.len() != h {
        return Err(Error::Dimension(format!("initial plan has {} actions, horizon is {h}", init_mean.len())));
    }
    let lim = opts.torque_limit;
    let mut mean: Vec<f64> = init_mean.iter().map(|u| u.clamp(-lim, lim)).collect();
    let mut std = alloc::vec![opts.init_std; h];
    let mut elites: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut elite_costs = Vec::with_capacity(opts.iterations);
    for _ in 0..opts.iterations {
        let mut pool: Vec<(f64, Vec<f64>)> = Vec::with_capacity(opts.population + elites.len() + 1);
        pool.push((plan_cost(s, &mean, models, opts.dt), mean.clone()));
        for _ in 0..opts.population {
            let seq: Vec<f64> = (0..h)
                .map(|t| (mean[t] + std[t] * rng.sample::<f64, _>(StandardNormal)).clamp(-lim, lim))
                .collect();
            pool.push((plan_cost(s, &seq, models, opts.dt), seq));
        }
        pool.append(&mut elites);
        // stable sort keeps pool order among equal costs
        pool.sort_by(|a, b| a.0.total_cmp(&b.0));
        pool.truncate(opts.elites);
        elites = pool;
        let ne = elites.len() as f64;
        for t in 0..h {
            let m = elites.iter().map(|e| e.1[t]).sum::<f64>() / ne;
            let v = elites.iter().map(|e| (e.1[t] - m) * (e.1[t] - m)).sum::<f64>() / ne;
            mean[t] = m;
            std[t] = libm::sqrt(v);
        }
        elite_costs.push(elites.iter().map(|e| e.0).sum::<f64>() / ne);
    }
    Ok(CemPlan { actions: mean, elite_costs })
}

/// `count` parameters uniform in the ball of `radius` around `center`,
/// resampling draws with a non-positive component.
pub fn sample_ball<R: Rng + ?Sized>(
    center: &PendulumParams,
    radius: f64,
    count: usize,
    rng: &mut R,
) -> Result<Vec<PendulumParams>> {
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(Error::InvalidArgument(format!("sampling radius must be nonnegative, got {radius}")));
    }
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count {
        attempts += 1;
        if attempts > 1000 * count.max(1) {
            return Err(Error::InvalidArgument("sampling ball lies outside the positive orthant".into()));
        }
        let w = crate::sysid::unit_ball_point(rng, 3);
        let cand = [center.m + radius * w[0], center.l + radius * w[1], center.g + radius * w[2]];
        if cand.iter().all(|v| *v > 0.0) {
            out.push(PendulumParams { m: cand[0], l: cand[1], g: cand[2] });
        }
    }
    Ok(out)
}

/// Planning strategy for an episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum PlanMethod {
    Ce,
    Dr,
}

impl PlanMethod {
    pub fn name(self) -> &'static str {
        match self {
            PlanMethod::Ce => "ce",
            PlanMethod::Dr => "dr",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeStep {
    pub t: usize,
    pub state: PendulumState,
    pub torque: f64,
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLog {
    pub steps: Vec<EpisodeStep>,
    pub total_cost: f64,
}

/// Receding-horizon episode from the upright position.
///
/// At every step the planner is warm-started with the previous plan shifted
/// by one; the first action is applied to `truth` together with torque noise
/// `N(0, noise_std²)`. Planning and noise use separate generators.
pub fn run_episode_with_models(
    truth: &PendulumParams,
    models: &[PendulumParams],
    len: usize,
    noise_std: f64,
    opts: &CemOptions,
    plan_rng: &mut StreamRng,
    noise_rng: &mut StreamRng,
) -> Result<EpisodeLog> {
    opts.validate()?;
    let mut s = PendulumState::upright();
    let mut warm = alloc::vec![0.0; opts.horizon];
    let mut steps = Vec::with_capacity(len);
    let mut total = 0.0;
    for t in 0..len {
        let plan = cem_plan_from(s, models, &warm, opts, plan_rng)?;
        let torque = plan.actions[0];
        let cost = stage_cost(s, torque);
        total += cost;
        steps.push(EpisodeStep { t, state: s, torque, cost });
        let w: f64 = noise_std * noise_rng.sample::<f64, _>(StandardNormal);
        s = pendulum_step(s, torque + w, truth, opts.dt);
        warm.copy_within(1.., 0);
        warm[opts.horizon - 1] = 0.0;
        warm[..opts.horizon - 1].copy_from_slice(&plan.actions[1..]);
    }
    Ok(EpisodeLog { steps, total_cost: total })
}

/// Models used by a planning method: `{θ̂}` for CE, `model_samples` draws
/// from the ball of `radius` around `θ̂` for DR.
pub fn planning_models(
    method: PlanMethod,
    estimate: &PendulumParams,
    radius: f64,
    opts: &CemOptions,
    model_rng: &mut StreamRng,
) -> Result<Vec<PendulumParams>> {
    match method {
        PlanMethod::Ce => Ok(alloc::vec![*estimate]),
        PlanMethod::Dr => sample_ball(estimate, radius, opts.model_samples, model_rng),
    }
}

/// One episode with the planning models of `method`; the sub-streams
/// `(seed, "models" | "plan" | "noise")` are shared by both methods.
pub fn run_episode(
    method: PlanMethod,
    truth: &PendulumParams,
    estimate: &PendulumParams,
    radius: f64,
    len: usize,
    opts: &CemOptions,
    seed: u64,
) -> Result<EpisodeLog> {
    let models = planning_models(method, estimate, radius, opts, &mut rng::stream(seed, &[rng::tag("models")]))?;
    run_episode_with_models(
        truth,
        &models,
        len,
        1.0,
        opts,
        &mut rng::stream(seed, &[rng::tag("plan")]),
        &mut rng::stream(seed, &[rng::tag("noise")]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn fast_opts() -> CemOptions {
        CemOptions { population: 32, iterations: 4, ..CemOptions::default() }
    }

    #[test]
    fn equilibria_are_fixed_points() {
        let p = PendulumParams::truth();
        assert_eq!(pendulum_step(PendulumState::upright(), 0.0, &p, DEFAULT_DT), PendulumState::upright());
        let down = pendulum_step(PendulumState::downward(), 0.0, &p, DEFAULT_DT);
        assert_eq!(down.psi, PI);
        assert!(down.psi_dot.abs() < 1e-14);
    }

    #[test]
    fn small_angle_period_matches_linearization() {
        // downward small oscillation has angular frequency √(g/l)
        let p = PendulumParams::new(1.0, 2.0, 9.81).unwrap();
        let dt = 0.001;
        let mut s = PendulumState::new(PI + 0.01, 0.0);
        let mut crossings = Vec::new();
        let mut prev = s.psi - PI;
        for i in 0..20_000 {
            s = pendulum_step(s, 0.0, &p, dt);
            let cur = s.psi - PI;
            if prev < 0.0 && cur >= 0.0 {
                crossings.push(i as f64 * dt);
            }
            prev = cur;
        }
        let period = (crossings[crossings.len() - 1] - crossings[0]) / (crossings.len() - 1) as f64;
        let expected = 2.0 * PI / libm::sqrt(9.81 / 2.0);
        assert!((period - expected).abs() < 0.02 * expected, "{period} vs {expected}");
    }

    #[test]
    fn stage_cost_table() {
        assert_eq!(stage_cost(PendulumState::upright(), 0.0), 0.0);
        assert_eq!(stage_cost(PendulumState::new(PI / 2.0, 0.0), 0.0), 50.0);
        let c = stage_cost(PendulumState::new(PI / 8.0, 1.0), 0.5);
        assert!((c - ((PI / 8.0) * (PI / 8.0) + 0.1 + 0.5)).abs() < 1e-15);
        // wrapping brings 2π back inside the band
        assert_eq!(stage_cost(PendulumState::new(2.0 * PI, 0.0), 0.0), 0.0);
        assert_eq!(stage_cost(PendulumState::new(PI / 4.0, 0.0), 0.0), PI * PI / 16.0);
    }

    #[test]
    fn wrap_angle_range() {
        for x in [-10.0, -PI, -1.0, 0.0, 1.0, PI, 3.5 * PI, 100.0] {
            let w = wrap_angle(x);
            assert!(w > -PI - 1e-12 && w <= PI + 1e-12);
            assert!((libm::sin(w) - libm::sin(x)).abs() < 1e-9);
        }
        assert_eq!(wrap_angle(PI), PI);
    }

    #[test]
    fn noiseless_identification_recovers_identifiable_combinations() {
        let truth = PendulumParams::truth();
        let data = collect_pendulum_data(&truth, 3, 10, 1.0, 0.0, DEFAULT_DT, 4);
        let fit = identify_pendulum(&data, DEFAULT_DT).unwrap();
        assert!((fit.params.gravity_ratio() - 9.81).abs() <= 1e-6);
        assert!((fit.params.torque_gain() - 1.0).abs() <= 1e-6);
        assert!(fit.rms_residual < 1e-10);
        assert_eq!(fit.jacobian_rank, 2);
    }

    #[test]
    fn mass_length_gravity_are_not_separately_identifiable() {
        // (m, l, g) and (m/4, 2l, 2g) produce identical transitions
        let a = PendulumParams::truth();
        let b = PendulumParams::new(0.25, 2.0, 19.62).unwrap();
        let s = PendulumState::new(0.7, -0.3);
        assert_eq!(pendulum_step(s, 0.4, &a, DEFAULT_DT), pendulum_step(s, 0.4, &b, DEFAULT_DT));
    }

    #[test]
    fn identification_improves_with_data() {
        let truth = PendulumParams::truth();
        let median_err = |n: usize| {
            let mut errs: Vec<f64> = (0..20u64)
                .map(|seed| {
                    let data = collect_pendulum_data(&truth, n, 10, 1.0, 1.0, DEFAULT_DT, seed);
                    let p = identify_pendulum(&data, DEFAULT_DT).unwrap().params;
                    libm::hypot(p.gravity_ratio() - 9.81, p.torque_gain() - 1.0)
                })
                .collect();
            errs.sort_by(f64::total_cmp);
            errs[10]
        };
        assert!(median_err(50) < median_err(2));
    }

    #[test]
    fn resting_data_is_not_identifiable() {
        let rest = PendulumTrajectory::new(alloc::vec![PendulumState::downward(); 6], alloc::vec![0.0; 5]).unwrap();
        assert!(matches!(identify_pendulum(&[rest], DEFAULT_DT), Err(Error::NotIdentifiable(_))));
        assert!(matches!(identify_pendulum(&[], DEFAULT_DT), Err(Error::NotIdentifiable(0))));
    }

    #[test]
    fn cem_at_upright_with_truth_model_is_cheap() {
        let opts = CemOptions::default();
        let truth = PendulumParams::truth();
        let plan = cem_plan(PendulumState::upright(), &[truth], &opts, &mut rng::stream(1, &[])).unwrap();
        let cost = plan_cost(PendulumState::upright(), &plan.actions, &[truth], opts.dt);
        assert!(cost <= 0.01 * opts.horizon as f64, "cost {cost}");
    }

    #[test]
    fn cem_elite_costs_do_not_increase() {
        let opts = CemOptions::default();
        let plan = cem_plan(
            PendulumState::new(0.3, 0.5),
            &[PendulumParams::truth()],
            &opts,
            &mut rng::stream(2, &[]),
        )
        .unwrap();
        for w in plan.elite_costs.windows(2) {
            assert!(w[1] <= w[0], "{:?}", plan.elite_costs);
        }
    }

    #[test]
    fn identical_models_plan_like_a_single_model() {
        let opts = fast_opts();
        let p = PendulumParams::new(1.2, 0.9, 9.0).unwrap();
        let s = PendulumState::new(0.2, -0.1);
        let single = cem_plan(s, &[p], &opts, &mut rng::stream(3, &[])).unwrap();
        let many = cem_plan(s, &[p; 15], &opts, &mut rng::stream(3, &[])).unwrap();
        assert_eq!(single.actions, many.actions);
    }

    #[test]
    fn cem_population_of_one() {
        let opts = CemOptions { population: 1, elites: 1, ..CemOptions::default() };
        let plan = cem_plan(PendulumState::new(0.1, 0.0), &[PendulumParams::truth()], &opts, &mut rng::stream(4, &[])).unwrap();
        assert!(plan.actions.iter().all(|u| u.is_finite() && u.abs() <= 3.0));
        assert!(CemOptions { elites: 9, population: 8, ..CemOptions::default() }.validate().is_err());
    }

    #[test]
    fn ball_samples_respect_radius_and_positivity() {
        let c = PendulumParams::new(0.5, 1.0, 9.0).unwrap();
        let mut rng = StreamRng::seed_from_u64(5);
        let s = sample_ball(&c, 1.0, 200, &mut rng).unwrap();
        assert!(s.iter().all(|p| p.distance(&c) <= 1.0 + 1e-12 && p.m > 0.0));
        let zero = sample_ball(&c, 0.0, 15, &mut rng).unwrap();
        assert!(zero.iter().all(|p| *p == c));
    }

    #[test]
    fn zero_radius_dr_episode_equals_ce() {
        let opts = fast_opts();
        let truth = PendulumParams::truth();
        let est = PendulumParams::new(1.1, 0.95, 9.5).unwrap();
        let ce = run_episode(PlanMethod::Ce, &truth, &est, 0.0, 15, &opts, 8).unwrap();
        let dr = run_episode(PlanMethod::Dr, &truth, &est, 0.0, 15, &opts, 8).unwrap();
        assert_eq!(ce, dr);
    }

    #[test]
    fn truth_model_keeps_pendulum_upright() {
        let opts = fast_opts();
        let truth = PendulumParams::truth();
        let log = run_episode(PlanMethod::Ce, &truth, &truth, 0.0, 60, &opts, 11).unwrap();
        assert!(log.steps.iter().all(|s| wrap_angle(s.state.psi).abs() <= FRAC_PI_4));
        // torque noise of unit variance must be countered at every step
        assert!(log.total_cost < 10.0 * 60.0, "total {}", log.total_cost);
    }
}

