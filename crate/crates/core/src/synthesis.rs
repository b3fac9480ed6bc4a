//! Controller synthesis from an identified model: certainty equivalence,
//! domain randomization by masked policy-gradient descent, and scenario
//! robust control by subgradient descent on the worst-case excess cost.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::lqr::{
    cost_and_gradient, dare_solve, excess_given_optimum, lqr_cost, optimal_gain, Cost, CostModel,
    Gain, SystemParams,
};
use crate::sysid::{sample_antithetic, sample_uniform, ConfidenceEllipsoid};

/// Options for domain-randomized descent.
#[derive(Clone, Debug, PartialEq)]
pub struct DrOptions {
    pub n_scenarios: usize,
    pub max_iters: usize,
    pub step_size: f64,
    /// Stop once the summed masked gradient has at most this Frobenius norm.
    pub grad_tol: f64,
    /// Consecutive unstable iterations before the step is halved.
    pub divergence_patience: usize,
    /// Draw the scenarios as antithetic pairs around the center.
    pub antithetic: bool,
}

impl Default for DrOptions {
    fn default() -> Self {
        Self { n_scenarios: 30, max_iters: 10_000, step_size: 0.0005, grad_tol: 1e-6, divergence_patience: 50, antithetic: false }
    }
}

impl DrOptions {
    pub fn validate(&self) -> Result<()> {
        if self.n_scenarios == 0 || self.max_iters == 0 {
            return Err(Error::InvalidArgument("DR needs at least one scenario and one iteration".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) || !(self.grad_tol >= 0.0) {
            return Err(Error::InvalidArgument("DR step size must be positive and grad_tol nonnegative".into()));
        }
        if self.antithetic && self.n_scenarios % 2 != 0 {
            return Err(Error::InvalidArgument("antithetic DR needs an even scenario count".into()));
        }
        Ok(())
    }
}

/// Options for scenario robust control.
#[derive(Clone, Debug, PartialEq)]
pub struct RcOptions {
    pub n_scenarios: usize,
    pub max_iters: usize,
    /// Initial length of the normalized subgradient step, in gain units.
    pub step_size: f64,
    /// Number of best-ranked candidate gains descended from.
    pub restarts: usize,
    /// Iterations without improvement of the best objective before stopping.
    pub patience: usize,
    /// Factors applied to `Q` for the extra certainty-equivalent candidates
    /// `K(θ̂)` computed under inflated state weights.
    pub weight_inflation: Vec<f64>,
}

impl Default for RcOptions {
    fn default() -> Self {
        Self {
            n_scenarios: 30,
            max_iters: 2_000,
            step_size: 0.05,
            restarts: 1,
            patience: 200,
            weight_inflation: alloc::vec![1e1, 1e2, 1e3, 1e4, 1e5, 1e6],
        }
    }
}

impl RcOptions {
    pub fn validate(&self) -> Result<()> {
        if self.n_scenarios == 0 || self.max_iters == 0 || self.restarts == 0 {
            return Err(Error::InvalidArgument(
                "RC needs at least one scenario, iteration and restart".into(),
            ));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidArgument("RC step size must be positive".into()));
        }
        if self.weight_inflation.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
            return Err(Error::InvalidArgument("RC weight inflation factors must be positive".into()));
        }
        Ok(())
    }
}

/// Result of an iterative synthesis run.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthesisReport {
    pub gain: Gain,
    /// Monitored objective at each iterate.
    pub objective_trace: Vec<Cost>,
    /// Share of scenarios stabilized at each iterate.
    pub stabilized_fraction_trace: Vec<f64>,
    pub converged: bool,
    /// Monitored objective of the returned gain.
    pub objective: Cost,
    /// Step size in effect when the run stopped.
    pub final_step_size: f64,
}

impl SynthesisReport {
    pub fn iterations(&self) -> usize {
        self.objective_trace.len()
    }
}

/// The certainty-equivalent gain `K(θ̂)`.
pub fn synth_ce(theta_hat: &SystemParams, cm: &CostModel) -> Result<Gain> {
    optimal_gain(theta_hat, cm)
}

fn nonempty(scenarios: &[SystemParams]) -> Result<()> {
    if scenarios.is_empty() {
        Err(Error::InvalidArgument("scenario list is empty".into()))
    } else {
        Ok(())
    }
}

/// Mean LQR cost over the scenarios, `Infinite` if any is destabilized.
pub fn dr_objective(k: &Gain, scenarios: &[SystemParams], cm: &CostModel) -> Result<Cost> {
    nonempty(scenarios)?;
    let mut total = 0.0;
    for theta in scenarios {
        match lqr_cost(k, theta, cm)? {
            Cost::Finite(c) => total += c,
            Cost::Infinite => return Ok(Cost::Infinite),
        }
    }
    Ok(Cost::from_value(total / scenarios.len() as f64))
}

struct MaskedEval {
    stable: usize,
    cost_sum: f64,
    grad: Mat,
}

fn masked_eval(k: &Mat, scenarios: &[SystemParams], cm: &CostModel) -> MaskedEval {
    let mut eval = MaskedEval { stable: 0, cost_sum: 0.0, grad: Mat::zeros(k.nrows(), k.ncols()) };
    if k.iter().any(|v| !v.is_finite()) {
        return eval;
    }
    for theta in scenarios {
        // solver failures count as destabilized scenarios
        if let Ok(Some((c, g))) = cost_and_gradient(k, theta, cm) {
            if c.is_finite() && g.iter().all(|v| v.is_finite()) {
                eval.stable += 1;
                eval.cost_sum += c;
                eval.grad += g;
            }
        }
    }
    eval
}

struct Best {
    k: Mat,
    stable: usize,
    mean_cost: f64,
}

impl Best {
    fn improved_by(&self, stable: usize, mean_cost: f64) -> bool {
        stable > self.stable || (stable == self.stable && mean_cost < self.mean_cost)
    }
}

/// Masked gradient descent on the summed scenario cost, starting at `init`.
///
/// A scenario contributes to the step only while the iterate stabilizes it.
/// The returned gain is the best iterate ranked first by the number of
/// stabilized scenarios, then by their mean cost. After
/// `divergence_patience` consecutive iterates that destabilize some scenario
/// (once a fully stabilizing iterate has been seen), or as soon as an iterate
/// stabilizes none, the step is halved and descent restarts from the best
/// iterate.
pub fn dr_descent(init: &Gain, scenarios: &[SystemParams], cm: &CostModel, opts: &DrOptions) -> Result<SynthesisReport> {
    nonempty(scenarios)?;
    opts.validate()?;
    let n = scenarios.len();
    let mut k = init.matrix().clone();
    let mut eta = opts.step_size;
    let mut best: Option<Best> = None;
    let mut objective_trace = Vec::new();
    let mut stabilized_fraction_trace = Vec::new();
    let mut converged = false;
    let mut unstable_run = 0usize;
    let mut seen_all_stable = false;

    for _ in 0..opts.max_iters {
        let eval = masked_eval(&k, scenarios, cm);
        let objective = if eval.stable == n { Cost::from_value(eval.cost_sum / n as f64) } else { Cost::Infinite };
        objective_trace.push(objective);
        stabilized_fraction_trace.push(eval.stable as f64 / n as f64);

        if eval.stable > 0 {
            let mean = eval.cost_sum / eval.stable as f64;
            if best.as_ref().is_none_or(|b| b.improved_by(eval.stable, mean)) {
                best = Some(Best { k: k.clone(), stable: eval.stable, mean_cost: mean });
            }
        }
        seen_all_stable |= eval.stable == n;

        if eval.stable == 0 {
            match &best {
                Some(b) => {
                    eta *= 0.5;
                    k = b.k.clone();
                    unstable_run = 0;
                    continue;
                }
                None => break,
            }
        }
        if eval.grad.norm() <= opts.grad_tol {
            converged = true;
            break;
        }
        if seen_all_stable && eval.stable < n {
            unstable_run += 1;
            if unstable_run >= opts.divergence_patience {
                eta *= 0.5;
                k = best.as_ref().map(|b| b.k.clone()).unwrap_or(k);
                unstable_run = 0;
                continue;
            }
        } else {
            unstable_run = 0;
        }
        k -= &eval.grad * eta;
    }

    let best = best.ok_or(Error::AllScenariosUnstable)?;
    let gain = Gain::new(best.k);
    let objective = dr_objective(&gain, scenarios, cm)?;
    Ok(SynthesisReport {
        gain,
        objective_trace,
        stabilized_fraction_trace,
        converged,
        objective,
        final_step_size: eta,
    })
}

/// Domain randomization over scenarios drawn once from the ellipsoid,
/// initialized at the certainty-equivalent gain of its center.
pub fn synth_dr<R: Rng + ?Sized>(
    g: &ConfidenceEllipsoid,
    cm: &CostModel,
    opts: &DrOptions,
    rng: &mut R,
) -> Result<SynthesisReport> {
    opts.validate()?;
    let init = synth_ce(g.center(), cm)?;
    let scenarios = if opts.antithetic {
        sample_antithetic(g, opts.n_scenarios, rng)?
    } else {
        sample_uniform(g, opts.n_scenarios, rng)?
    };
    dr_descent(&init, &scenarios, cm, opts)
}

/// Scenario set with the optimal cost of each member.
#[derive(Clone, Debug)]
pub struct RobustProblem {
    scenarios: Vec<SystemParams>,
    optimal: Vec<f64>,
    optimal_gains: Vec<Gain>,
}

impl RobustProblem {
    /// Solves the DARE of every scenario.
    pub fn new(scenarios: Vec<SystemParams>, cm: &CostModel) -> Result<Self> {
        nonempty(&scenarios)?;
        let mut optimal = Vec::with_capacity(scenarios.len());
        let mut optimal_gains = Vec::with_capacity(scenarios.len());
        for theta in &scenarios {
            let sol = dare_solve(theta, cm)?;
            optimal.push(lqr_cost(&sol.k, theta, cm)?.value());
            optimal_gains.push(sol.k);
        }
        Ok(Self { scenarios, optimal, optimal_gains })
    }

    pub fn scenarios(&self) -> &[SystemParams] {
        &self.scenarios
    }

    pub fn optimal_gains(&self) -> &[Gain] {
        &self.optimal_gains
    }

    /// Worst-case excess cost and the lowest index attaining it.
    pub fn worst_case(&self, k: &Gain, cm: &CostModel) -> Result<(Cost, usize)> {
        let mut worst = (Cost::Finite(f64::NEG_INFINITY), 0);
        for (j, (theta, opt)) in self.scenarios.iter().zip(&self.optimal).enumerate() {
            let e = excess_given_optimum(k, theta, cm, *opt)?;
            if e.is_infinite() {
                return Ok((Cost::Infinite, j));
            }
            if e > worst.0 {
                worst = (e, j);
            }
        }
        Ok(worst)
    }
}

/// Maximum excess cost over the scenarios.
pub fn rc_objective(k: &Gain, scenarios: &[SystemParams], cm: &CostModel) -> Result<Cost> {
    let problem = RobustProblem::new(scenarios.to_vec(), cm)?;
    Ok(problem.worst_case(k, cm)?.0)
}

/// Normalized subgradient descent on the worst-case excess cost from `init`.
///
/// The step length is `step_size / √(k+1)`; a step that destabilizes some
/// scenario is rejected and the step length halved. Stops after `patience`
/// iterations without improving the best objective.
pub fn rc_descent(init: &Gain, problem: &RobustProblem, cm: &CostModel, opts: &RcOptions) -> Result<SynthesisReport> {
    opts.validate()?;
    let mut k = init.matrix().clone();
    let (mut current, mut active) = problem.worst_case(init, cm)?;
    if current.is_infinite() {
        return Err(Error::NoStabilizingCandidate);
    }
    let mut best = (current, k.clone());
    let mut objective_trace = Vec::new();
    let mut stabilized_fraction_trace = Vec::new();
    let mut shrink = 1.0;
    let mut since_improvement = 0usize;
    let mut converged = false;
    for iter in 0..opts.max_iters {
        objective_trace.push(current);
        stabilized_fraction_trace.push(1.0);
        let grad = match cost_and_gradient(&k, &problem.scenarios[active], cm)? {
            Some((_, g)) => g,
            None => return Err(Error::NoStabilizingCandidate),
        };
        let gnorm = grad.norm();
        if !(gnorm > 0.0) || !gnorm.is_finite() {
            converged = true;
            break;
        }
        let step = opts.step_size * shrink / libm::sqrt((iter + 1) as f64);
        if step < 1e-14 * (1.0 + k.norm()) {
            converged = true;
            break;
        }
        let candidate = &k - &grad * (step / gnorm);
        let (value, idx) = problem.worst_case(&Gain::new(candidate.clone()), cm)?;
        if value.is_infinite() {
            shrink *= 0.5;
            continue;
        }
        k = candidate;
        current = value;
        active = idx;
        if current < best.0 {
            let rel = (best.0.value() - current.value()) / best.0.value().abs().max(f64::MIN_POSITIVE);
            best = (current, k.clone());
            if rel > 1e-10 {
                since_improvement = 0;
                continue;
            }
        }
        since_improvement += 1;
        if since_improvement >= opts.patience {
            converged = true;
            break;
        }
    }
    Ok(SynthesisReport {
        gain: Gain::new(best.1),
        objective_trace,
        stabilized_fraction_trace,
        converged,
        objective: best.0,
        final_step_size: opts.step_size * shrink,
    })
}

/// Scenario robust control over samples from the ellipsoid.
///
/// Candidates are `K(θ̂)`, the gains of `θ̂` under each inflated state weight
/// `f·Q`, and the optimal gain of every scenario; descent starts from the `restarts` candidates with the lowest worst-case
/// excess cost and the best result is returned.
pub fn synth_rc<R: Rng + ?Sized>(
    g: &ConfidenceEllipsoid,
    cm: &CostModel,
    opts: &RcOptions,
    rng: &mut R,
) -> Result<SynthesisReport> {
    opts.validate()?;
    let scenarios = sample_uniform(g, opts.n_scenarios, rng)?;
    let problem = RobustProblem::new(scenarios, cm)?;
    let mut candidates = Vec::with_capacity(problem.scenarios.len() + 1);
    if let Ok(k) = synth_ce(g.center(), cm) {
        candidates.push(k);
    }
    for &f in &opts.weight_inflation {
        let inflated = CostModel::new(cm.q() * f, cm.r().clone(), cm.sigma_w().clone())?;
        if let Ok(k) = synth_ce(g.center(), &inflated) {
            candidates.push(k);
        }
    }
    candidates.extend(problem.optimal_gains.iter().cloned());
    robust_from_candidates(&candidates, &problem, cm, opts)
}

/// Ranks the candidates by worst-case excess cost and descends from the best.
pub fn robust_from_candidates(
    candidates: &[Gain],
    problem: &RobustProblem,
    cm: &CostModel,
    opts: &RcOptions,
) -> Result<SynthesisReport> {
    let mut ranked = Vec::new();
    for (i, k) in candidates.iter().enumerate() {
        let (value, _) = problem.worst_case(k, cm)?;
        if value.is_finite() {
            ranked.push((value, i));
        }
    }
    if ranked.is_empty() {
        return Err(Error::NoStabilizingCandidate);
    }
    ranked.sort();
    let mut best: Option<SynthesisReport> = None;
    for &(_, i) in ranked.iter().take(opts.restarts) {
        let report = rc_descent(&candidates[i], problem, cm, opts)?;
        if best.as_ref().is_none_or(|b| report.objective < b.objective) {
            best = Some(report);
        }
    }
    best.ok_or(Error::NoStabilizingCandidate)
}
