//! Command-line interface: `identify`, `synth`, `bench`, `pendulum` and
//! `theory` subcommands sharing one configuration file.

use std::collections::HashSet;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use drlqr_core::linalg::{opnorm, Mat};
use drlqr_core::rng;
use drlqr_core::synthesis::{synth_ce, synth_dr, synth_rc};
use drlqr_core::sysid::{
    collect_dataset_with_noise, confidence_ellipsoid, fisher_estimate, least_squares, ConfidenceEllipsoid, Dataset,
    FisherEstimate,
};
use drlqr_core::theory::{
    ce_cost_hessian_fd, gain_jacobian_check, inequality_suite, leading_terms, model_task_hessian, population_fisher,
};
use drlqr_core::{excess_cost, optimal_gain, CostModel, SystemParams};

use crate::bench::{self, SweepConfig};
use crate::config::{Method, RunConfig};
use crate::error::{Error, Result};
use crate::io;
use crate::pendulum::{self, PendulumExperiment};

#[derive(Debug, Parser)]
#[command(name = "drlqr", version, about = "Data-driven LQR synthesis experiments")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Configuration file (TOML); defaults apply to missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Least-squares estimate, Fisher information and confidence ellipsoid.
    Identify,
    /// Synthesize a controller from identified data.
    Synth {
        #[arg(long, value_enum, default_value_t = Method::Ce)]
        method: Method,
    },
    /// Excess-cost sweep over the number of experiments.
    Bench {
        /// Keep rows already present in the trial file.
        #[arg(long)]
        resume: bool,
        /// Seeds per cell, overriding the configuration.
        #[arg(long)]
        seeds: Option<u64>,
        /// Restrict the sweep to one method.
        #[arg(long, value_enum)]
        method: Option<Method>,
    },
    /// CE and DR pendulum control across data budgets.
    Pendulum {
        #[arg(long)]
        seeds: Option<u64>,
    },
    /// Model-task Hessian, leading terms and the inequality suite.
    Theory,
}

/// Loads the configuration and applies flag overrides; flags win.
pub fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.global.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.global.out {
        cfg.out = out.clone();
    }
    match &cli.command {
        Command::Bench { seeds, method, .. } => {
            if let Some(s) = seeds {
                cfg.bench.seeds = *s;
            }
            if let Some(m) = method {
                cfg.bench.methods = vec![*m];
            }
        }
        Command::Pendulum { seeds: Some(s) } => cfg.pendulum.seeds = *s,
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = effective_config(cli)?;
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(Error::config("--threads", "must be at least 1"));
        }
        // a second initialization in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    io::write_text(&cfg.out.join("effective_config.toml"), &cfg.to_toml())?;
    match &cli.command {
        Command::Identify => cmd_identify(&cfg),
        Command::Synth { method } => cmd_synth(&cfg, *method),
        Command::Bench { resume, .. } => cmd_bench(&cfg, *resume),
        Command::Pendulum { .. } => cmd_pendulum(&cfg),
        Command::Theory => cmd_theory(&cfg),
    }
}

struct Identified {
    theta: SystemParams,
    cm: CostModel,
    theta_hat: SystemParams,
    fisher: FisherEstimate,
    ellipsoid: ConfidenceEllipsoid,
}

fn load_or_simulate(cfg: &RunConfig, theta: &SystemParams, cm: &CostModel) -> Result<Dataset> {
    if let Some(path) = &cfg.data.dataset {
        let ds = io::read_dataset(path)?;
        if ds.dx() != theta.dx() || ds.du() != theta.du() {
            return Err(Error::config("data.dataset", "dimensions differ from the configured system"));
        }
        return Ok(ds);
    }
    let noise = if cfg.data.noiseless { Mat::zeros(theta.dx(), theta.dx()) } else { cm.sigma_w().clone() };
    let sigma_u = cfg.system.sigma_u()?;
    Ok(collect_dataset_with_noise(theta, &noise, cfg.data.trajectories, cfg.data.horizon, &sigma_u, cfg.seed)?)
}

fn identify(cfg: &RunConfig) -> Result<Identified> {
    let theta = cfg.system.theta()?;
    let cm = cfg.system.cost_model()?;
    let ds = load_or_simulate(cfg, &theta, &cm)?;
    if cfg.data.dataset.is_none() {
        io::write_dataset_csv(&cfg.out.join("dataset.csv"), &ds)?;
    }
    let theta_hat = least_squares(&ds)?;
    let fisher = fisher_estimate(&ds, &cm)?;
    let ellipsoid = confidence_ellipsoid(&theta_hat, &fisher, ds.len(), cfg.identify.delta)?;
    println!("trajectories N = {}, horizon T = {}", ds.len(), ds.horizon());
    println!("‖θ̂ − θ⋆‖_F = {:.3e}", theta_hat.distance(&theta));
    Ok(Identified { theta, cm, theta_hat, fisher, ellipsoid })
}

fn cmd_identify(cfg: &RunConfig) -> Result<()> {
    let id = identify(cfg)?;
    let out = &cfg.out;
    io::write_matrix(&out.join("theta_hat.csv"), &id.theta_hat.stacked())?;
    io::write_matrix(&out.join("fisher.csv"), &id.fisher.matrix)?;
    io::write_matrix(&out.join("ellipsoid_shape.csv"), id.ellipsoid.shape())?;
    let desc = format!(
        "# center: theta_hat.csv (column-major vec of [A B]), shape: ellipsoid_shape.csv\n\
         dtheta = {}\ndelta = {}\nradius_sq = {}\ncontains_reference = {}\n",
        id.ellipsoid.dim(),
        cfg.identify.delta,
        id.ellipsoid.radius_sq(),
        id.ellipsoid.contains(&id.theta)
    );
    io::write_text(&out.join("ellipsoid.toml"), &desc)?;
    println!("ellipsoid radius² = {:.4}, contains θ⋆: {}", id.ellipsoid.radius_sq(), id.ellipsoid.contains(&id.theta));
    Ok(())
}

fn cmd_synth(cfg: &RunConfig, method: Method) -> Result<()> {
    let id = identify(cfg)?;
    let out = &cfg.out;
    let mut stream = rng::stream(cfg.seed, &[rng::tag(method.name())]);
    let gain = match method {
        Method::Ce => {
            println!("method ce");
            synth_ce(&id.theta_hat, &id.cm)?
        }
        Method::Dr => {
            let o = cfg.dr.options()?;
            println!(
                "method dr: M={}, eta={}, scenarios={}, antithetic={}",
                o.max_iters, o.step_size, o.n_scenarios, o.antithetic
            );
            let report = synth_dr(&id.ellipsoid, &id.cm, &o, &mut stream)?;
            io::write_synthesis_report(&out.join("report.csv"), &report)?;
            println!("iterations {}, converged {}, objective {}", report.iterations(), report.converged, report.objective);
            report.gain
        }
        Method::Rc => {
            let o = cfg.rc.options()?;
            println!(
                "method rc: scenarios={}, iterations={}, step={}, restarts={}",
                o.n_scenarios, o.max_iters, o.step_size, o.restarts
            );
            let report = synth_rc(&id.ellipsoid, &id.cm, &o, &mut stream)?;
            io::write_synthesis_report(&out.join("report.csv"), &report)?;
            println!("iterations {}, converged {}, objective {}", report.iterations(), report.converged, report.objective);
            report.gain
        }
    };
    io::write_matrix(&out.join("gain.csv"), gain.matrix())?;
    io::write_matrix(&out.join("dare_gain.csv"), optimal_gain(&id.theta, &id.cm)?.matrix())?;
    println!("excess cost on θ⋆: {}", excess_cost(&gain, &id.theta, &id.cm)?);
    Ok(())
}

fn cmd_bench(cfg: &RunConfig, resume: bool) -> Result<()> {
    let sweep = SweepConfig::from_run_config(cfg)?;
    let trials_path = cfg.out.join("trials.csv");
    let previous = if resume && trials_path.exists() { bench::read_trials(&trials_path)? } else { Vec::new() };
    let keep: Vec<_> = previous
        .into_iter()
        .filter(|r| sweep.n_grid.contains(&r.n) && sweep.methods.contains(&r.method) && r.seed < sweep.seeds)
        .collect();
    let skip: HashSet<_> = keep.iter().map(|r| r.key()).collect();
    if resume {
        eprintln!("resuming: {} trials already present", skip.len());
    }
    let step = ((sweep.n_grid.len() as u64 * sweep.seeds) / 20).max(1) as usize;
    let progress = |done: usize, total: usize| {
        if done % step == 0 || done == total {
            eprintln!("bench: {done}/{total} cells");
        }
    };
    let mut rows = bench::run_sweep(&sweep, &skip, &progress)?;
    rows.extend(keep);
    bench::sort_trials(&mut rows);
    bench::write_trials(&trials_path, &rows)?;
    let summary = bench::summarize(&rows, &sweep.n_grid, &sweep.methods)?;
    bench::write_summary(&cfg.out.join("summary.csv"), &summary)?;
    bench::write_plot(&cfg.out.join("excess_cost.svg"), &summary)?;
    println!("{:>8} {:>6} {:>12} {:>12} {:>12} {:>9}", "N", "method", "median", "q25", "q75", "unstable");
    for s in &summary {
        println!(
            "{:>8} {:>6} {:>12} {:>12} {:>12} {:>9.2}",
            s.n,
            s.method,
            fmt_cost(s.median),
            fmt_cost(s.q25),
            fmt_cost(s.q75),
            s.unstable_fraction
        );
    }
    Ok(())
}

fn fmt_cost(c: drlqr_core::Cost) -> String {
    match c.finite() {
        Some(v) => format!("{v:.4e}"),
        None => "inf".into(),
    }
}

fn cmd_pendulum(cfg: &RunConfig) -> Result<()> {
    let exp = PendulumExperiment::from_run_config(cfg)?;
    let step = ((exp.budgets.len() as u64 * exp.seeds * 2) / 20).max(1) as usize;
    let progress = |done: usize, total: usize| {
        if done % step == 0 || done == total {
            eprintln!("pendulum: {done}/{total} episodes");
        }
    };
    let rows = pendulum::run_experiment(&exp, cfg.pendulum.episode_logs, &progress)?;
    pendulum::write_costs(&cfg.out.join("costs.csv"), &rows)?;
    if cfg.pendulum.episode_logs {
        let dir = cfg.out.join("episodes");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for r in &rows {
            if let Some(log) = &r.log {
                let name = format!("n{}_seed{}_{}.csv", r.n, r.seed, r.method.name());
                io::write_episode_log(&dir.join(name), log)?;
            }
        }
    }
    let summary = pendulum::summarize(&rows, &exp.budgets)?;
    pendulum::write_summary(&cfg.out.join("summary.csv"), &summary)?;
    println!("{:>6} {:>6} {:>18} {:>18} {:>18}", "n", "seeds", "CE mean ± SE", "DR mean ± SE", "DR − CE ± SE");
    for s in &summary {
        println!(
            "{:>6} {:>6} {:>10.1} ± {:<5.1} {:>10.1} ± {:<5.1} {:>10.1} ± {:<5.1}",
            s.n, s.seeds, s.ce_mean, s.ce_se, s.dr_mean, s.dr_se, s.diff_mean, s.diff_se
        );
    }
    Ok(())
}

fn cmd_theory(cfg: &RunConfig) -> Result<()> {
    let theta = cfg.system.theta()?;
    let cm = cfg.system.cost_model()?;
    let out = &cfg.out;
    let h = model_task_hessian(&theta, &cm)?;
    let h_fd = ce_cost_hessian_fd(&theta, &cm, cfg.theory.fd_step)? * 0.5;
    let deviation = (&h.h - &h_fd).norm() / h_fd.norm().max(f64::MIN_POSITIVE);
    io::write_matrix(&out.join("hessian.csv"), &h.h)?;
    io::write_matrix(&out.join("hessian_fd.csv"), &h_fd)?;
    println!("H(θ⋆): dθ = {}, min eigenvalue {:.3e}", h.h.nrows(), h.min_eigenvalue());
    println!("analytic vs finite-difference Hessian: relative Frobenius deviation {deviation:.3e}");

    let sigma_u = cfg.system.sigma_u()?;
    let fi = population_fisher(&theta, &cm, cfg.data.horizon, &sigma_u, cfg.theory.fisher_rollouts, cfg.seed)?;
    io::write_matrix(&out.join("fisher_population.csv"), &fi.matrix)?;
    let terms = leading_terms(&h.h, &fi.matrix, cfg.theory.n)?;
    let trace = terms.ce_dr_term * terms.n as f64;
    let dop = terms.rc_term * terms.n as f64;
    let ordered = trace <= dop;
    println!("trace(H FI⁻¹) = {trace:.6}");
    println!("dθ·‖H FI⁻¹‖ = {dop:.6}");
    println!("trace(H FI⁻¹) <= dθ·‖H FI⁻¹‖: {ordered}");
    println!("leading terms at N = {}: CE/DR {:.6e}, RC {:.6e}", terms.n, terms.ce_dr_term, terms.rc_term);
    let path = out.join("leading_terms.csv");
    let mut w = io::csv_writer(&path)?;
    let err = |e| Error::csv(&path, e);
    w.write_record(["quantity", "value"]).map_err(err)?;
    for (name, v) in [
        ("n", terms.n as f64),
        ("trace_h_fi_inv", trace),
        ("dtheta_opnorm_h_fi_inv", dop),
        ("ce_dr_term", terms.ce_dr_term),
        ("rc_term", terms.rc_term),
        ("hessian_fd_deviation", deviation),
        ("hessian_opnorm", opnorm(&h.h)),
    ] {
        w.serialize((name, v)).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let mut suite_rng = rng::stream(cfg.seed, &[rng::tag("suite")]);
    let (report, suite_cm) = match inequality_suite(&theta, &cm, cfg.theory.perturbations, &mut suite_rng) {
        Err(drlqr_core::Error::PreconditionViolated(why)) => {
            println!("inequality suite preconditions fail for the configured costs ({why}); using Q = R = Σw = I");
            let unit = CostModel::scaled_identity(theta.dx(), theta.du(), 1.0)?;
            let mut suite_rng = rng::stream(cfg.seed, &[rng::tag("suite")]);
            (inequality_suite(&theta, &unit, cfg.theory.perturbations, &mut suite_rng)?, unit)
        }
        other => (other?, cm.clone()),
    };
    let mut report = report;
    report.record(gain_jacobian_check(&theta, &suite_cm)?);
    io::write_suite_report(&out.join("suite.csv"), &report)?;
    for c in &report.checks {
        println!("{:<32} margin {:>10.3e} {}", c.name, c.margin, if c.pass { "pass" } else { "FAIL" });
    }
    println!("inequality suite: {}", if report.all_pass() { "all pass" } else { "failures reported" });
    Ok(())
}

/// Parses arguments, runs the command and maps failures to exit codes.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
