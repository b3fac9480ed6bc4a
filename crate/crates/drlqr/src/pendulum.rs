//! Pendulum experiment: CE and DR receding-horizon control from models
//! identified with varying numbers of trajectories.

use std::path::Path;

use drlqr_core::pendulum::{
    collect_pendulum_data, identify_pendulum, planning_models, run_episode_with_models, CemOptions, EpisodeLog,
    PendulumParams, PlanMethod,
};
use drlqr_core::rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::{csv_reader, csv_writer};

#[derive(Clone, Debug, PartialEq)]
pub struct PendulumExperiment {
    pub truth: PendulumParams,
    pub budgets: Vec<usize>,
    pub seeds: u64,
    pub master_seed: u64,
    pub data_horizon: usize,
    pub data_sigma_u: f64,
    pub data_sigma_w: f64,
    pub episode_len: usize,
    pub episode_noise: f64,
    pub radius_scale: f64,
    /// Plan with the true parameters instead of the fitted ones.
    pub use_truth: bool,
    pub cem: CemOptions,
}

impl PendulumExperiment {
    pub fn from_run_config(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let p = &cfg.pendulum;
        Ok(Self {
            truth: p.truth()?,
            budgets: p.budgets.clone(),
            seeds: p.seeds,
            master_seed: cfg.seed,
            data_horizon: p.data_horizon,
            data_sigma_u: p.data_sigma_u,
            data_sigma_w: p.data_sigma_w,
            episode_len: p.episode_len,
            episode_noise: p.episode_noise,
            radius_scale: p.radius_scale,
            use_truth: p.use_truth,
            cem: p.cem.options()?,
        })
    }

    /// DR sampling radius for a budget of `n` trajectories.
    pub fn radius(&self, n: usize) -> f64 {
        self.radius_scale / n as f64
    }

    /// Fitted parameters from `n` trajectories. A fit that exhausts its
    /// iteration budget still yields its last iterate.
    pub fn estimate(&self, seed: u64, n: usize) -> Result<PendulumParams> {
        if self.use_truth {
            return Ok(self.truth);
        }
        let data = collect_pendulum_data(
            &self.truth,
            n,
            self.data_horizon,
            self.data_sigma_u,
            self.data_sigma_w,
            self.cem.dt,
            rng::derive_seed(self.master_seed, &[seed, n as u64]),
        );
        match identify_pendulum(&data, self.cem.dt) {
            Ok(fit) => Ok(fit.params),
            Err(drlqr_core::Error::IdentificationFailed { m, l, g }) => Ok(PendulumParams { m, l, g }),
            Err(e) => Err(e.into()),
        }
    }

    /// One episode; both methods at the same `(seed, n)` share the planner
    /// and noise streams.
    pub fn episode(&self, seed: u64, n: usize, method: PlanMethod, estimate: &PendulumParams) -> Result<EpisodeLog> {
        let ep = rng::derive_seed(self.master_seed, &[seed, n as u64, rng::tag("episode")]);
        let models =
            planning_models(method, estimate, self.radius(n), &self.cem, &mut rng::stream(ep, &[rng::tag("models")]))?;
        Ok(run_episode_with_models(
            &self.truth,
            &models,
            self.episode_len,
            self.episode_noise,
            &self.cem,
            &mut rng::stream(ep, &[rng::tag("plan")]),
            &mut rng::stream(ep, &[rng::tag("noise")]),
        )?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    pub seed: u64,
    pub n: usize,
    pub method: PlanMethod,
    pub cost: f64,
    pub estimate: PendulumParams,
    pub log: Option<EpisodeLog>,
}

/// All `(seed, budget, method)` episodes, sorted by `(n, method, seed)`.
pub fn run_experiment(
    exp: &PendulumExperiment,
    keep_logs: bool,
    progress: &(dyn Fn(usize, usize) + Sync),
) -> Result<Vec<EpisodeResult>> {
    let cells: Vec<(u64, usize)> =
        exp.budgets.iter().flat_map(|&n| (0..exp.seeds).map(move |s| (s, n))).collect();
    let estimates: Vec<PendulumParams> =
        cells.par_iter().map(|&(s, n)| exp.estimate(s, n)).collect::<Result<_>>()?;
    let tasks: Vec<(usize, PlanMethod)> =
        (0..cells.len()).flat_map(|i| [(i, PlanMethod::Ce), (i, PlanMethod::Dr)]).collect();
    let total = tasks.len();
    let done = std::sync::atomic::AtomicUsize::new(0);
    let mut out: Vec<EpisodeResult> = tasks
        .par_iter()
        .map(|&(i, method)| {
            let (seed, n) = cells[i];
            let log = exp.episode(seed, n, method, &estimates[i])?;
            progress(done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1, total);
            Ok(EpisodeResult {
                seed,
                n,
                method,
                cost: log.total_cost,
                estimate: estimates[i],
                log: keep_logs.then_some(log),
            })
        })
        .collect::<Result<_>>()?;
    out.sort_by_key(|r| (r.n, r.method, r.seed));
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PendulumSummary {
    pub n: usize,
    pub seeds: usize,
    pub ce_mean: f64,
    pub ce_se: f64,
    pub dr_mean: f64,
    pub dr_se: f64,
    /// Mean and standard error of the per-seed difference DR − CE.
    pub diff_mean: f64,
    pub diff_se: f64,
}

impl PendulumSummary {
    /// `√(SE_CE² + SE_DR²)`.
    pub fn pooled_se(&self) -> f64 {
        self.ce_se.hypot(self.dr_se)
    }
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per-budget statistics over seeds present for both methods.
pub fn summarize(rows: &[EpisodeResult], budgets: &[usize]) -> Result<Vec<PendulumSummary>> {
    budgets
        .iter()
        .map(|&n| {
            let cost = |m: PlanMethod, s: u64| rows.iter().find(|r| r.n == n && r.method == m && r.seed == s).map(|r| r.cost);
            let mut seeds: Vec<u64> = rows.iter().filter(|r| r.n == n).map(|r| r.seed).collect();
            seeds.sort_unstable();
            seeds.dedup();
            let pairs: Vec<(f64, f64)> = seeds
                .iter()
                .filter_map(|&s| Some((cost(PlanMethod::Ce, s)?, cost(PlanMethod::Dr, s)?)))
                .collect();
            if pairs.is_empty() {
                return Err(Error::config("pendulum", format!("no paired episodes for budget {n}")));
            }
            let ce: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let dr: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let diff: Vec<f64> = pairs.iter().map(|p| p.1 - p.0).collect();
            let (ce_mean, ce_se) = mean_se(&ce);
            let (dr_mean, dr_se) = mean_se(&dr);
            let (diff_mean, diff_se) = mean_se(&diff);
            Ok(PendulumSummary { n, seeds: pairs.len(), ce_mean, ce_se, dr_mean, dr_se, diff_mean, diff_se })
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct EpisodeRecord {
    seed: u64,
    n: usize,
    method: String,
    cost: f64,
    m_hat: f64,
    l_hat: f64,
    g_hat: f64,
}

/// Columns `seed,n,method,cost,m_hat,l_hat,g_hat`.
pub fn write_costs(path: &Path, rows: &[EpisodeResult]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(EpisodeRecord {
            seed: r.seed,
            n: r.n,
            method: r.method.name().to_string(),
            cost: r.cost,
            m_hat: r.estimate.m,
            l_hat: r.estimate.l,
            g_hat: r.estimate.g,
        })
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_costs(path: &Path) -> Result<Vec<EpisodeResult>> {
    let mut r = csv_reader(path)?;
    r.deserialize::<EpisodeRecord>()
        .map(|rec| {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            let method = match rec.method.as_str() {
                "ce" => PlanMethod::Ce,
                "dr" => PlanMethod::Dr,
                other => return Err(Error::format(path, format!("unknown method {other:?}"))),
            };
            Ok(EpisodeResult {
                seed: rec.seed,
                n: rec.n,
                method,
                cost: rec.cost,
                estimate: PendulumParams { m: rec.m_hat, l: rec.l_hat, g: rec.g_hat },
                log: None,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct SummaryRecord {
    n: usize,
    seeds: usize,
    ce_mean: f64,
    ce_se: f64,
    dr_mean: f64,
    dr_se: f64,
    diff_mean: f64,
    diff_se: f64,
    pooled_se: f64,
}

/// Columns `n,seeds,ce_mean,ce_se,dr_mean,dr_se,diff_mean,diff_se,pooled_se`.
pub fn write_summary(path: &Path, rows: &[PendulumSummary]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for s in rows {
        w.serialize(SummaryRecord {
            n: s.n,
            seeds: s.seeds,
            ce_mean: s.ce_mean,
            ce_se: s.ce_se,
            dr_mean: s.dr_mean,
            dr_se: s.dr_se,
            diff_mean: s.diff_mean,
            diff_se: s.diff_se,
            pooled_se: s.pooled_se(),
        })
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
