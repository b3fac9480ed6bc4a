//! Run configuration read from a TOML file.
//!
//! Every section and key is optional; missing values fall back to the
//! defaults below, which describe the 3-state benchmark system. Unknown keys
//! are rejected.

use std::path::{Path, PathBuf};

use drlqr_core::linalg::Mat;
use drlqr_core::pendulum::{CemOptions, PendulumParams, DEFAULT_DT};
use drlqr_core::synthesis::{DrOptions, RcOptions};
use drlqr_core::{CostModel, SystemParams};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Synthesis method of the linear experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ce,
    Dr,
    Rc,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ce, Method::Dr, Method::Rc];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ce => "ce",
            Method::Dr => "dr",
            Method::Rc => "rc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed.
    pub seed: u64,
    /// Output directory, relative to the working directory.
    pub out: PathBuf,
    pub system: SystemSection,
    pub data: DataSection,
    pub identify: IdentifySection,
    pub dr: DrSection,
    pub rc: RcSection,
    pub bench: BenchSection,
    pub pendulum: PendulumSection,
    pub theory: TheorySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            system: SystemSection::default(),
            data: DataSection::default(),
            identify: IdentifySection::default(),
            dr: DrSection::default(),
            rc: RcSection::default(),
            bench: BenchSection::default(),
            pendulum: PendulumSection::default(),
            theory: TheorySection::default(),
        }
    }
}

/// True system and cost weights. Matrices are lists of rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub sigma_w: Vec<Vec<f64>>,
    /// Covariance of the exploratory inputs.
    pub sigma_u: Vec<Vec<f64>>,
}

fn identity(n: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { scale } else { 0.0 }).collect()).collect()
}

impl Default for SystemSection {
    fn default() -> Self {
        Self {
            a: vec![vec![1.01, 0.01, 0.0], vec![0.01, 1.01, 0.01], vec![0.0, 0.01, 1.01]],
            b: identity(3, 1.0),
            q: identity(3, 1e-3),
            r: identity(3, 1.0),
            sigma_w: identity(3, 1.0),
            sigma_u: identity(3, 1.0),
        }
    }
}

fn matrix(field: &str, rows: &[Vec<f64>]) -> Result<Mat> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(Error::config(field, "matrix must be nonempty"));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::config(field, "rows have different lengths"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::config(field, "entries must be finite"));
    }
    Ok(Mat::from_row_iterator(nrows, ncols, rows.iter().flatten().copied()))
}

fn rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl SystemSection {
    pub fn from_parts(theta: &SystemParams, cm: &CostModel, sigma_u: &Mat) -> Self {
        Self {
            a: rows(theta.a()),
            b: rows(theta.b()),
            q: rows(cm.q()),
            r: rows(cm.r()),
            sigma_w: rows(cm.sigma_w()),
            sigma_u: rows(sigma_u),
        }
    }

    pub fn theta(&self) -> Result<SystemParams> {
        SystemParams::new(matrix("system.a", &self.a)?, matrix("system.b", &self.b)?)
            .map_err(|e| Error::config("system", e.to_string()))
    }

    pub fn cost_model(&self) -> Result<CostModel> {
        CostModel::new(matrix("system.q", &self.q)?, matrix("system.r", &self.r)?, matrix("system.sigma_w", &self.sigma_w)?)
            .map_err(|e| Error::config("system", e.to_string()))
    }

    pub fn sigma_u(&self) -> Result<Mat> {
        let m = matrix("system.sigma_u", &self.sigma_u)?;
        let du = self.b.first().map_or(0, Vec::len);
        if m.nrows() != du || m.ncols() != du {
            return Err(Error::config("system.sigma_u", format!("must be {du}x{du}")));
        }
        Ok(m)
    }
}

/// Data collection for `identify` and `synth`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Number of trajectories N.
    pub trajectories: usize,
    /// Trajectory length T.
    pub horizon: usize,
    /// Simulate without process noise.
    pub noiseless: bool,
    /// Read the dataset from this CSV or binary file instead of simulating.
    pub dataset: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { trajectories: 100, horizon: 10, noiseless: false, dataset: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentifySection {
    /// Confidence level δ of the ellipsoid.
    pub delta: f64,
}

impl Default for IdentifySection {
    fn default() -> Self {
        Self { delta: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DrSection {
    pub n_scenarios: usize,
    pub max_iters: usize,
    pub step_size: f64,
    pub grad_tol: f64,
    pub divergence_patience: usize,
    pub antithetic: bool,
}

impl Default for DrSection {
    fn default() -> Self {
        let d = DrOptions::default();
        Self {
            n_scenarios: d.n_scenarios,
            max_iters: d.max_iters,
            step_size: d.step_size,
            grad_tol: d.grad_tol,
            divergence_patience: d.divergence_patience,
            antithetic: d.antithetic,
        }
    }
}

impl DrSection {
    pub fn options(&self) -> Result<DrOptions> {
        let o = DrOptions {
            n_scenarios: self.n_scenarios,
            max_iters: self.max_iters,
            step_size: self.step_size,
            grad_tol: self.grad_tol,
            divergence_patience: self.divergence_patience,
            antithetic: self.antithetic,
        };
        o.validate().map_err(|e| Error::config("dr", e.to_string()))?;
        Ok(o)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RcSection {
    pub n_scenarios: usize,
    pub max_iters: usize,
    pub step_size: f64,
    pub restarts: usize,
    pub patience: usize,
    pub weight_inflation: Vec<f64>,
}

impl Default for RcSection {
    fn default() -> Self {
        let d = RcOptions::default();
        Self {
            n_scenarios: d.n_scenarios,
            max_iters: d.max_iters,
            step_size: d.step_size,
            restarts: d.restarts,
            patience: d.patience,
            weight_inflation: d.weight_inflation,
        }
    }
}

impl RcSection {
    pub fn options(&self) -> Result<RcOptions> {
        let o = RcOptions {
            n_scenarios: self.n_scenarios,
            max_iters: self.max_iters,
            step_size: self.step_size,
            restarts: self.restarts,
            patience: self.patience,
            weight_inflation: self.weight_inflation.clone(),
        };
        o.validate().map_err(|e| Error::config("rc", e.to_string()))?;
        Ok(o)
    }
}

/// Monte Carlo sweep over experiment counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub n_grid: Vec<usize>,
    pub seeds: u64,
    pub methods: Vec<Method>,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self { n_grid: vec![20, 120, 800, 5_000, 30_000, 200_000], seeds: 100, methods: Method::ALL.to_vec() }
    }
}

/// Pendulum data budgets and receding-horizon control.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PendulumSection {
    /// True `[m, l, g]`.
    pub truth: [f64; 3],
    /// Numbers of identification trajectories.
    pub budgets: Vec<usize>,
    pub seeds: u64,
    /// Length of each identification trajectory.
    pub data_horizon: usize,
    pub data_sigma_u: f64,
    pub data_sigma_w: f64,
    pub episode_len: usize,
    /// Torque noise during episodes.
    pub episode_noise: f64,
    /// DR sampling radius is `radius_scale / budget`.
    pub radius_scale: f64,
    /// Plan with the true parameters instead of identified ones.
    pub use_truth: bool,
    /// Write a per-step log for every episode.
    pub episode_logs: bool,
    pub cem: CemSection,
}

impl Default for PendulumSection {
    fn default() -> Self {
        Self {
            truth: [1.0, 1.0, 9.81],
            budgets: vec![3, 5, 10, 20, 50],
            seeds: 30,
            data_horizon: 10,
            data_sigma_u: 1.0,
            data_sigma_w: 1.0,
            episode_len: 100,
            episode_noise: 1.0,
            radius_scale: 2.0,
            use_truth: false,
            episode_logs: false,
            cem: CemSection::default(),
        }
    }
}

impl PendulumSection {
    pub fn truth(&self) -> Result<PendulumParams> {
        let [m, l, g] = self.truth;
        PendulumParams::new(m, l, g).map_err(|e| Error::config("pendulum.truth", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.truth()?;
        self.cem.options()?;
        if self.budgets.is_empty() || self.budgets.contains(&0) || !self.budgets.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::config("pendulum.budgets", "must be positive and strictly increasing"));
        }
        if self.seeds == 0 || self.episode_len == 0 || self.data_horizon == 0 {
            return Err(Error::config("pendulum", "seeds, episode_len and data_horizon must be positive"));
        }
        for (name, v) in [
            ("pendulum.data_sigma_u", self.data_sigma_u),
            ("pendulum.data_sigma_w", self.data_sigma_w),
            ("pendulum.episode_noise", self.episode_noise),
            ("pendulum.radius_scale", self.radius_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be finite and nonnegative"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CemSection {
    pub horizon: usize,
    pub population: usize,
    pub elites: usize,
    pub iterations: usize,
    pub init_std: f64,
    pub model_samples: usize,
    pub torque_limit: f64,
    pub dt: f64,
}

impl Default for CemSection {
    fn default() -> Self {
        let d = CemOptions::default();
        Self {
            horizon: d.horizon,
            population: d.population,
            elites: d.elites,
            iterations: d.iterations,
            init_std: d.init_std,
            model_samples: d.model_samples,
            torque_limit: d.torque_limit,
            dt: DEFAULT_DT,
        }
    }
}

impl CemSection {
    pub fn options(&self) -> Result<CemOptions> {
        let o = CemOptions {
            horizon: self.horizon,
            population: self.population,
            elites: self.elites,
            iterations: self.iterations,
            init_std: self.init_std,
            model_samples: self.model_samples,
            torque_limit: self.torque_limit,
            dt: self.dt,
        };
        o.validate().map_err(|e| Error::config("pendulum.cem", e.to_string()))?;
        Ok(o)
    }
}

/// Model-task Hessian, leading terms and the inequality suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheorySection {
    /// Experiment count at which the leading terms are reported.
    pub n: usize,
    /// Rollouts of the Monte Carlo Fisher information.
    pub fisher_rollouts: usize,
    /// Finite-difference step of the Hessian check.
    pub fd_step: f64,
    /// Random perturbations per inequality check.
    pub perturbations: usize,
}

impl Default for TheorySection {
    fn default() -> Self {
        Self { n: 400, fisher_rollouts: 20_000, fd_step: drlqr_core::theory::HESSIAN_STEP, perturbations: 20 }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| {
                    let line = text[..s.start].matches('\n').count() + 1;
                    format!("line {line}: {}", text[s.clone()].trim())
                })
                .unwrap_or_default();
            Error::config(field, e.message().to_string())
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config { field, message } => Error::config(format!("{}: {field}", path.display()), message),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every section; called before any computation.
    pub fn validate(&self) -> Result<()> {
        let theta = self.system.theta()?;
        let cm = self.system.cost_model()?;
        if cm.dx() != theta.dx() || cm.du() != theta.du() {
            return Err(Error::config("system", "Q, R and sigma_w must match the dimensions of A and B"));
        }
        self.system.sigma_u()?;
        if self.data.trajectories == 0 || self.data.horizon == 0 {
            return Err(Error::config("data", "trajectories and horizon must be positive"));
        }
        if !(self.identify.delta > 0.0 && self.identify.delta < 1.0) {
            return Err(Error::config("identify.delta", "must lie in (0, 1)"));
        }
        self.dr.options()?;
        self.rc.options()?;
        let grid = &self.bench.n_grid;
        if grid.is_empty() || grid[0] == 0 || !grid.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::config("bench.n_grid", "must be positive and strictly increasing"));
        }
        if self.bench.seeds == 0 {
            return Err(Error::config("bench.seeds", "must be at least 1"));
        }
        if self.bench.methods.is_empty() {
            return Err(Error::config("bench.methods", "must name at least one method"));
        }
        self.pendulum.validate()?;
        if self.theory.n == 0 || self.theory.fisher_rollouts == 0 || self.theory.perturbations == 0 {
            return Err(Error::config("theory", "n, fisher_rollouts and perturbations must be positive"));
        }
        if !(self.theory.fd_step > 0.0) {
            return Err(Error::config("theory.fd_step", "must be positive"));
        }
        Ok(())
    }
}
