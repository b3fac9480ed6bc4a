//! Acceptance suite. Runs every criterion (or those named by number on the
//! command line) and prints one PASS/FAIL line per criterion.
//!
//! ```text
//! cargo test --release -p drlqr --test acceptance
//! cargo test --release -p drlqr --test acceptance -- 1 7
//! ```

use std::collections::HashSet;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use drlqr::bench::{run_sweep, summarize, SweepConfig};
use drlqr::config::{Method, RunConfig};
use drlqr::pendulum::{self, PendulumExperiment, PendulumSummary};
use drlqr_core::linalg::{min_sym_eigenvalue, opnorm, spectral_radius, Mat, Vector};
use drlqr_core::lqr::dare_residual;
use drlqr_core::rng::{self, StreamRng};
use drlqr_core::synthesis::{robust_from_candidates, synth_ce, RcOptions, RobustProblem};
use drlqr_core::sysid::{
    collect_dataset, confidence_ellipsoid, fisher_estimate, least_squares, sample_uniform, ConfidenceEllipsoid,
};
use drlqr_core::theory::{
    ce_cost_hessian_fd, ce_excess, gain_jacobian_check, identification_bound, inequality_suite, leading_terms,
    model_task_hessian, population_fisher, HESSIAN_STEP,
};
use drlqr_core::{dare_solve, dlyap, lqr_cost, performance_difference, policy_gradient, CostModel, Gain, SystemParams};
use rand::Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let wanted: HashSet<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria = [
        Criterion { id: 1, name: "scalar worked example", budget: secs(5), run: scalar_example },
        Criterion { id: 2, name: "solver correctness", budget: secs(60), run: solver_suite },
        Criterion { id: 3, name: "model-task Hessian", budget: secs(30), run: hessian_check },
        Criterion { id: 4, name: "CE second-order law", budget: secs(30), run: second_order_law },
        Criterion { id: 5, name: "identification bound and coverage", budget: secs(600), run: identification },
        Criterion { id: 6, name: "excess cost trends", budget: secs(1800), run: excess_cost_trends },
        Criterion { id: 7, name: "ellipsoid sampler moments", budget: secs(10), run: sampler_moments },
        Criterion { id: 8, name: "perturbation inequality suite", budget: secs(120), run: inequality_checks },
        Criterion { id: 9, name: "pendulum trend", budget: secs(900), run: pendulum_trend },
    ];
    let mut failed = Vec::new();
    for c in criteria.iter().filter(|c| wanted.is_empty() || wanted.contains(&c.id)) {
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed();
        let in_time = elapsed <= c.budget;
        let pass = outcome.pass && in_time;
        let timing = format!("{:.1} s of {} s", elapsed.as_secs_f64(), c.budget.as_secs());
        let timing = if in_time { timing } else { format!("{timing}, over budget") };
        println!(
            "criterion {} {:<36} {}  {} [{timing}]",
            c.id,
            c.name,
            if pass { "PASS" } else { "FAIL" },
            outcome.detail
        );
        if !pass {
            failed.push(c.id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn scalar(v: f64) -> Mat {
    Mat::from_element(1, 1, v)
}

fn paper_system() -> (SystemParams, CostModel) {
    let a = Mat::from_row_slice(3, 3, &[1.01, 0.01, 0.0, 0.01, 1.01, 0.01, 0.0, 0.01, 1.01]);
    (SystemParams::new(a, Mat::identity(3, 3)).unwrap(), CostModel::scaled_identity(3, 3, 1e-3).unwrap())
}

fn randn(rng: &mut StreamRng, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// Random instance with `Q ⪰ I`, `R = I`, `Σw = I` and open-loop spectral
/// radius in `[0.3, 1.3)`; stabilizable with probability one.
fn random_instance(rng: &mut StreamRng, max_dx: usize, max_du: usize) -> (SystemParams, CostModel) {
    let dx = rng.random_range(1..=max_dx);
    let du = rng.random_range(1..=max_du);
    let m = randn(rng, dx, dx);
    let a = &m * (rng.random_range(0.3..1.3) / spectral_radius(&m).unwrap().max(1e-12));
    let b = randn(rng, dx, du);
    let l = randn(rng, dx, dx) * 0.3;
    let q = Mat::identity(dx, dx) + &l * l.transpose();
    let cm = CostModel::new(q, Mat::identity(du, du), Mat::identity(dx, dx)).unwrap();
    (SystemParams::new(a, b).unwrap(), cm)
}

fn scalar_example() -> Outcome {
    let cm = CostModel::new(scalar(1.0), scalar(1000.0), scalar(1.0)).unwrap();
    let theta = |a: f64| SystemParams::new(scalar(a), scalar(1.0)).unwrap();
    let k = synth_ce(&theta(1.01), &cm).unwrap().matrix()[(0, 0)];
    let ce_ok = (k + 0.0424).abs() <= 5e-4;
    let rho_true = spectral_radius(&scalar(1.05 + k)).unwrap();

    let grid: Vec<f64> = (0..=15).map(|i| 0.3 + 0.1 * i as f64).collect();
    let problem = RobustProblem::new(grid.iter().map(|a| theta(*a)).collect(), &cm).unwrap();
    let mut candidates = vec![Gain::new(scalar(k))];
    candidates.extend(problem.optimal_gains().iter().cloned());
    let rc = robust_from_candidates(&candidates, &problem, &cm, &RcOptions::default()).unwrap();
    let krc = rc.gain.matrix()[(0, 0)];
    let worst = grid.iter().map(|a| (a + krc).abs()).fold(0.0, f64::max);
    Outcome::new(
        ce_ok && rho_true > 1.0 && worst <= 0.98,
        format!("k_CE = {k:.5}, |1.05 + k_CE| = {rho_true:.4}, k_RC = {krc:.4}, worst |a + k_RC| = {worst:.4}"),
    )
}

fn nearby_gain(k: &Gain, theta: &SystemParams, rng: &mut StreamRng, eps: f64) -> Gain {
    let e = randn(rng, k.matrix().nrows(), k.matrix().ncols());
    let mut scale = eps;
    loop {
        let cand = Gain::new(k.matrix() + &e * scale);
        if spectral_radius(&theta.closed_loop(&cand).unwrap()).unwrap() < 0.999 {
            return cand;
        }
        scale *= 0.5;
    }
}

/// Derivative at 0 by Ridders' extrapolation of central differences,
/// returning the estimate with the smallest error estimate.
fn ridders(f: impl Fn(f64) -> f64, h0: f64) -> f64 {
    const SHRINK: f64 = 1.4;
    const N: usize = 10;
    let mut table = [[0.0f64; N]; N];
    let mut h = h0;
    while !(f(h).is_finite() && f(-h).is_finite()) {
        h *= 0.5;
    }
    table[0][0] = (f(h) - f(-h)) / (2.0 * h);
    let (mut best, mut err) = (table[0][0], f64::INFINITY);
    for i in 1..N {
        h /= SHRINK;
        table[0][i] = (f(h) - f(-h)) / (2.0 * h);
        let mut fac = SHRINK * SHRINK;
        for j in 1..=i {
            table[j][i] = (table[j - 1][i] * fac - table[j - 1][i - 1]) / (fac - 1.0);
            fac *= SHRINK * SHRINK;
            let e = (table[j][i] - table[j - 1][i]).abs().max((table[j][i] - table[j - 1][i - 1]).abs());
            if e <= err {
                err = e;
                best = table[j][i];
            }
        }
        if (table[i][i] - table[i - 1][i - 1]).abs() >= 2.0 * err {
            break;
        }
    }
    best
}

fn truncated_sum(acl: &Mat, q: &Mat) -> Mat {
    let mut total = q.clone();
    let mut term = q.clone();
    for _ in 0..100_000 {
        term = acl.transpose() * &term * acl;
        total += &term;
        if term.amax() < 1e-18 * total.amax() {
            break;
        }
    }
    total
}

fn solver_suite() -> Outcome {
    const INSTANCES: u64 = 100;
    let (mut dare, mut lyap, mut pdi, mut grad) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for i in 0..INSTANCES {
        let mut rng = rng::stream(2, &[i]);
        let (theta, cm) = random_instance(&mut rng, 5, 5);
        let sol = dare_solve(&theta, &cm).unwrap();
        dare = dare.max(dare_residual(&theta, &cm, &sol.p));

        let n = theta.dx();
        let m = randn(&mut rng, n, n);
        let acl = &m * (rng.random_range(0.0..0.95) / spectral_radius(&m).unwrap().max(1e-12));
        let l = randn(&mut rng, n, n);
        let q = &l * l.transpose() + Mat::identity(n, n);
        let reference = truncated_sum(&acl, &q);
        let p = dlyap(&acl, &q).unwrap();
        lyap = lyap.max((&p - &reference).amax() / reference.amax().max(1.0));

        let k = nearby_gain(&sol.k, &theta, &mut rng, 0.3);
        let c = lqr_cost(&k, &theta, &cm).unwrap().value();
        let c_opt = lqr_cost(&sol.k, &theta, &cm).unwrap().value();
        let pd = performance_difference(&k, &theta, &cm).unwrap();
        pdi = pdi.max((pd - (c - c_opt)).abs() / c.abs().max(1e-300));

        let g = policy_gradient(&k, &theta, &cm).unwrap();
        let cost_at = |r: usize, s: usize, step: f64| {
            let mut kk = k.matrix().clone();
            kk[(r, s)] += step;
            lqr_cost(&Gain::new(kk), &theta, &cm).unwrap().value()
        };
        let fd = Mat::from_fn(g.nrows(), g.ncols(), |r, s| ridders(|step| cost_at(r, s, step), 1e-3));
        grad = grad.max((&g - &fd).norm() / g.norm().max(1e-300));
    }
    Outcome::new(
        dare <= 1e-8 && lyap <= 1e-8 && pdi <= 1e-8 && grad <= 1e-5,
        format!(
            "{INSTANCES} instances: DARE residual {dare:.1e}, Lyapunov {lyap:.1e}, \
             performance difference {pdi:.1e}, gradient {grad:.1e}"
        ),
    )
}

fn hessian_check() -> Outcome {
    let (theta, cm) = paper_system();
    let h = model_task_hessian(&theta, &cm).unwrap().h;
    let fd = ce_cost_hessian_fd(&theta, &cm, HESSIAN_STEP).unwrap() * 0.5;
    let rel = (&h - &fd).norm() / fd.norm();
    let mut worst = f64::INFINITY;
    for i in 0..50 {
        let mut rng = rng::stream(3, &[i]);
        let (theta, cm) = random_instance(&mut rng, 3, 3);
        let h = model_task_hessian(&theta, &cm).unwrap().h;
        let scale = opnorm(&h).max(f64::MIN_POSITIVE);
        worst = worst.min(min_sym_eigenvalue(&h) / scale);
    }
    Outcome::new(
        rel <= 1e-3 && worst >= -1e-8,
        format!("relative Frobenius error {rel:.2e}, min eigenvalue/‖H‖ over 50 instances {worst:.1e}"),
    )
}

fn second_order_law() -> Outcome {
    let (theta, cm) = paper_system();
    let h = model_task_hessian(&theta, &cm).unwrap();
    let mut worst_growth = 0.0f64;
    let mut detail = String::new();
    for d in 0..5 {
        let mut rng = rng::stream(4, &[d]);
        let dir = Vector::from_fn(theta.dtheta(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let dir = &dir / dir.norm();
        let ratio = |eps: f64| {
            let delta = &dir * eps;
            let excess = ce_excess(&theta, &delta, &cm).unwrap().value();
            (excess - h.quadratic_form(&delta)).abs() / eps.powi(3)
        };
        let (r2, r3, r4) = (ratio(1e-2), ratio(1e-3), ratio(1e-4));
        worst_growth = worst_growth.max(r4 / r2);
        if d == 0 {
            detail = format!("ratios at ε = 1e-2, 1e-3, 1e-4: {r2:.3e}, {r3:.3e}, {r4:.3e}");
        }
    }
    Outcome::new(worst_growth <= 10.0, format!("{detail}; worst growth over 5 directions {worst_growth:.2}"))
}

fn identification() -> Outcome {
    const SEEDS: u64 = 200;
    const N: usize = 400;
    const T: usize = 10;
    let delta = 0.1;
    let (theta, cm) = paper_system();
    let sigma_u = Mat::identity(3, 3);
    let h = model_task_hessian(&theta, &cm).unwrap().h;
    let fi = population_fisher(&theta, &cm, T, &sigma_u, 20_000, 5).unwrap().matrix;
    let bound = identification_bound(&h, &fi, N, delta).unwrap();
    let (mut within, mut covered) = (0, 0);
    for s in 0..SEEDS {
        let ds = collect_dataset(&theta, &cm, N, T, &sigma_u, rng::derive_seed(5, &[s])).unwrap();
        let theta_hat = least_squares(&ds).unwrap();
        let err = theta_hat.flatten() - theta.flatten();
        if err.dot(&(&h * &err)) <= bound {
            within += 1;
        }
        let g = confidence_ellipsoid(&theta_hat, &fisher_estimate(&ds, &cm).unwrap(), N, delta).unwrap();
        if g.contains(&theta) {
            covered += 1;
        }
    }
    let n = SEEDS as f64;
    let needed = (1.0 - delta) * n - 3.0 * (n * delta * (1.0 - delta)).sqrt();
    Outcome::new(
        within as f64 >= needed && covered as f64 >= needed,
        format!("bound holds in {within}/{SEEDS}, θ⋆ ∈ G in {covered}/{SEEDS}, required {needed:.1}"),
    )
}

fn example_config(name: &str) -> RunConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples").join(name);
    RunConfig::load(&path).unwrap()
}

fn excess_cost_trends() -> Outcome {
    let cfg = example_config("fig2.cfg");
    let sweep = SweepConfig::from_run_config(&cfg).unwrap();
    let rows = run_sweep(&sweep, &HashSet::new(), &|_, _| {}).unwrap();
    let summary = summarize(&rows, &sweep.n_grid, &sweep.methods).unwrap();
    let cell = |n: usize, m: Method| summary.iter().find(|s| s.n == n && s.method == m).unwrap();

    let h = model_task_hessian(&sweep.theta, &sweep.cm).unwrap().h;
    let fi = population_fisher(&sweep.theta, &sweep.cm, sweep.horizon, &sweep.sigma_u, 20_000, cfg.seed).unwrap();
    let trace = leading_terms(&h, &fi.matrix, 1).unwrap().ce_dr_term;

    let unstable_n = sweep.n_grid.iter().copied().find(|&n| cell(n, Method::Ce).unstable_fraction > 0.1);
    let (a_ok, a_detail) = match unstable_n {
        Some(n) => {
            let (ce, dr, rc) = (cell(n, Method::Ce), cell(n, Method::Dr), cell(n, Method::Rc));
            (
                dr.unstable_fraction < ce.unstable_fraction && rc.unstable_fraction < ce.unstable_fraction,
                format!(
                    "(a) N={n} unstable CE {:.2} DR {:.2} RC {:.2}",
                    ce.unstable_fraction, dr.unstable_fraction, rc.unstable_fraction
                ),
            )
        }
        None => (false, "(a) CE never exceeds 10% unstable".to_string()),
    };

    let n_max = *sweep.n_grid.last().unwrap();
    let scaled = |m: Method| cell(n_max, m).median.value() * n_max as f64;
    let (ce, dr) = (scaled(Method::Ce), scaled(Method::Dr));
    let within3 = |v: f64| v <= 3.0 * trace && v >= trace / 3.0;
    let b_ok = within3(ce) && within3(dr) && ce.max(dr) <= 1.5 * ce.min(dr);
    let rc = cell(n_max, Method::Rc).median;
    let c_ok = rc >= cell(n_max, Method::Dr).median;
    Outcome::new(
        a_ok && b_ok && c_ok,
        format!(
            "{a_detail}; (b) N·median CE {ce:.3} DR {dr:.3} vs trace(H FI⁻¹) {trace:.3}; \
             (c) RC median {:.3e} vs DR {:.3e}",
            rc.value(),
            cell(n_max, Method::Dr).median.value()
        ),
    )
}

fn sampler_moments() -> Outcome {
    const SAMPLES: usize = 100_000;
    let center = SystemParams::new(scalar(0.9), scalar(0.5)).unwrap();
    let shape = Mat::from_row_slice(2, 2, &[40.0, 12.0, 12.0, 25.0]);
    let radius_sq = 3.0;
    let g = ConfidenceEllipsoid::from_parts(center.clone(), shape.clone(), radius_sq).unwrap();
    let draws = sample_uniform(&g, SAMPLES, &mut rng::stream(7, &[])).unwrap();
    let pts: Vec<Vector> = draws.iter().map(|t| t.flatten() - center.flatten()).collect();
    let n = SAMPLES as f64;
    let mean = pts.iter().fold(Vector::zeros(2), |acc, p| acc + p) / n;
    let cov = pts.iter().fold(Mat::zeros(2, 2), |acc, p| acc + (p - &mean) * (p - &mean).transpose()) / (n - 1.0);
    let z = (0..2).map(|i| mean[i].abs() / (cov[(i, i)] / n).sqrt()).fold(0.0, f64::max);
    let target = shape.try_inverse().unwrap() * (radius_sq / 4.0);
    let cov_err = opnorm(&(&cov - &target)) / opnorm(&target);
    Outcome::new(
        z <= 3.0 && cov_err <= 0.05,
        format!("max |mean|/SE {z:.2}, covariance relative error {cov_err:.4}"),
    )
}

fn inequality_checks() -> Outcome {
    const INSTANCES: u64 = 500;
    let mut failures = Vec::new();
    let mut worst = f64::INFINITY;
    let mut checks = 0;
    for i in 0..INSTANCES {
        let mut rng = rng::stream(8, &[i]);
        let (theta, cm) = random_instance(&mut rng, 4, 3);
        let mut report = inequality_suite(&theta, &cm, 5, &mut rng).unwrap();
        report.record(gain_jacobian_check(&theta, &cm).unwrap());
        checks = report.checks.len();
        for c in &report.checks {
            worst = worst.min(c.margin);
            if !c.pass {
                failures.push(format!("{} on instance {i}", c.name));
            }
        }
    }
    let detail = format!("{INSTANCES} instances × {checks} checks, worst margin {worst:.2e}");
    match failures.first() {
        None => Outcome::new(true, detail),
        Some(f) => Outcome::new(false, format!("{detail}, {} failures, first: {f}", failures.len())),
    }
}

fn pendulum_verdict(summary: &[PendulumSummary]) -> (bool, String) {
    let (first, last) = (summary.first().unwrap(), summary.last().unwrap());
    let low = first.dr_mean <= first.ce_mean;
    let high = (last.dr_mean - last.ce_mean).abs() <= 2.0 * last.pooled_se();
    (
        low && high,
        format!(
            "{} seeds: n={} CE {:.0} ± {:.0} DR {:.0} ± {:.0}; n={} |DR − CE| {:.0} vs 2·pooled SE {:.0}",
            first.seeds,
            first.n,
            first.ce_mean,
            first.ce_se,
            first.dr_mean,
            first.dr_se,
            last.n,
            (last.dr_mean - last.ce_mean).abs(),
            2.0 * last.pooled_se()
        ),
    )
}

fn pendulum_trend() -> Outcome {
    let mut cfg = example_config("fig3.cfg");
    let run = |cfg: &RunConfig| {
        let exp = PendulumExperiment::from_run_config(cfg).unwrap();
        let rows = pendulum::run_experiment(&exp, false, &|_, _| {}).unwrap();
        pendulum_verdict(&pendulum::summarize(&rows, &exp.budgets).unwrap())
    };
    let (pass, detail) = run(&cfg);
    if pass {
        return Outcome::new(true, detail);
    }
    cfg.pendulum.seeds = 50;
    let (pass, rerun) = run(&cfg);
    Outcome::new(pass, format!("{detail}; rerun {rerun}"))
}
