//! Monte Carlo comparison of CE, DR and RC excess cost against the number
//! of experiments.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use drlqr_core::linalg::Mat;
use drlqr_core::rng;
use drlqr_core::synthesis::{synth_ce, synth_dr, synth_rc, DrOptions, RcOptions};
use drlqr_core::sysid::{collect_dataset_with_noise, confidence_ellipsoid, fisher_estimate, least_squares, Dataset};
use drlqr_core::{excess_cost, Cost, CostModel, Gain, SystemParams};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use svg::node::element::{Group, Line, Path as SvgPath, Polygon, Rectangle, Text};
use svg::Document;

use crate::config::{Method, RunConfig};
use crate::error::{Error, Result};
use crate::io::{cost_field, csv_reader, csv_writer};

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub theta: SystemParams,
    pub cm: CostModel,
    pub n_grid: Vec<usize>,
    pub horizon: usize,
    pub sigma_u: Mat,
    pub delta: f64,
    pub methods: Vec<Method>,
    pub seeds: u64,
    pub master_seed: u64,
    pub noiseless: bool,
    pub dr: DrOptions,
    pub rc: RcOptions,
}

impl SweepConfig {
    pub fn from_run_config(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let sweep = Self {
            theta: cfg.system.theta()?,
            cm: cfg.system.cost_model()?,
            n_grid: cfg.bench.n_grid.clone(),
            horizon: cfg.data.horizon,
            sigma_u: cfg.system.sigma_u()?,
            delta: cfg.identify.delta,
            methods: cfg.bench.methods.clone(),
            seeds: cfg.bench.seeds,
            master_seed: cfg.seed,
            noiseless: cfg.data.noiseless,
            dr: cfg.dr.options()?,
            rc: cfg.rc.options()?,
        };
        sweep.validate()?;
        Ok(sweep)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_grid.is_empty() || self.n_grid[0] == 0 || !self.n_grid.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::config("bench.n_grid", "must be positive and strictly increasing"));
        }
        if self.seeds == 0 {
            return Err(Error::config("bench.seeds", "must be at least 1"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config("identify.delta", "must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Seed of the dataset shared by all methods at `(seed, n)`.
    pub fn dataset_seed(&self, seed: u64, n: usize) -> u64 {
        rng::derive_seed(self.master_seed, &[seed, n as u64])
    }

    pub fn dataset(&self, seed: u64, n: usize) -> Result<Dataset> {
        let noise = if self.noiseless { Mat::zeros(self.theta.dx(), self.theta.dx()) } else { self.cm.sigma_w().clone() };
        Ok(collect_dataset_with_noise(&self.theta, &noise, n, self.horizon, &self.sigma_u, self.dataset_seed(seed, n))?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialResult {
    pub seed: u64,
    pub n: usize,
    pub method: Method,
    pub excess_cost: Cost,
    pub stable: bool,
    /// Seconds spent on identification and synthesis.
    pub wall_time: f64,
}

impl TrialResult {
    pub fn key(&self) -> (u64, usize, Method) {
        (self.seed, self.n, self.method)
    }
}

/// Identifies from `ds` and synthesizes with `method`; any failure along the
/// way means no stabilizing controller.
pub fn synthesize(cfg: &SweepConfig, ds: &Dataset, seed: u64, method: Method) -> drlqr_core::Result<Gain> {
    let n = ds.len();
    let theta_hat = least_squares(ds)?;
    if method == Method::Ce {
        return synth_ce(&theta_hat, &cfg.cm);
    }
    let fi = fisher_estimate(ds, &cfg.cm)?;
    let g = confidence_ellipsoid(&theta_hat, &fi, n, cfg.delta)?;
    let mut stream = rng::stream(cfg.master_seed, &[seed, n as u64, rng::tag(method.name())]);
    match method {
        Method::Dr => synth_dr(&g, &cfg.cm, &cfg.dr, &mut stream).map(|r| r.gain),
        Method::Rc => synth_rc(&g, &cfg.cm, &cfg.rc, &mut stream).map(|r| r.gain),
        Method::Ce => unreachable!(),
    }
}

fn trial_on(cfg: &SweepConfig, ds: &Dataset, seed: u64, method: Method) -> TrialResult {
    let start = Instant::now();
    let excess = synthesize(cfg, ds, seed, method)
        .and_then(|k| excess_cost(&k, &cfg.theta, &cfg.cm))
        .unwrap_or(Cost::Infinite);
    TrialResult {
        seed,
        n: ds.len(),
        method,
        excess_cost: excess,
        stable: excess.is_finite(),
        wall_time: start.elapsed().as_secs_f64(),
    }
}

pub fn run_trial(cfg: &SweepConfig, seed: u64, n: usize, method: Method) -> Result<TrialResult> {
    let ds = cfg.dataset(seed, n)?;
    Ok(trial_on(cfg, &ds, seed, method))
}

/// Runs every `(seed, N, method)` not in `skip`, in parallel, with one
/// dataset per `(seed, N)`. `progress` receives `(done, total)` counts of
/// `(seed, N)` cells. Rows are sorted by `(N, method, seed)`.
pub fn run_sweep(
    cfg: &SweepConfig,
    skip: &HashSet<(u64, usize, Method)>,
    progress: &(dyn Fn(usize, usize) + Sync),
) -> Result<Vec<TrialResult>> {
    cfg.validate()?;
    let cells: Vec<(u64, usize, Vec<Method>)> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| (0..cfg.seeds).map(move |s| (s, n)))
        .filter_map(|(s, n)| {
            let todo: Vec<Method> = cfg.methods.iter().copied().filter(|m| !skip.contains(&(s, n, *m))).collect();
            (!todo.is_empty()).then_some((s, n, todo))
        })
        .collect();
    let total = cells.len();
    let done = AtomicUsize::new(0);
    let chunks: Vec<Vec<TrialResult>> = cells
        .par_iter()
        .map(|(seed, n, methods)| {
            let ds = cfg.dataset(*seed, *n)?;
            let rows = methods.iter().map(|m| trial_on(cfg, &ds, *seed, *m)).collect();
            progress(done.fetch_add(1, Ordering::Relaxed) + 1, total);
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let mut rows: Vec<TrialResult> = chunks.into_iter().flatten().collect();
    sort_trials(&mut rows);
    Ok(rows)
}

pub fn sort_trials(rows: &mut [TrialResult]) {
    rows.sort_by_key(|r| (r.n, r.method, r.seed));
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub n: usize,
    pub method: Method,
    pub median: Cost,
    pub q25: Cost,
    pub q75: Cost,
    pub unstable_fraction: f64,
}

/// Nearest-rank quantile of sorted values: element `⌈q·len⌉` (1-based).
pub fn nearest_rank(sorted: &[Cost], q: f64) -> Cost {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Quantiles per `(N, method)` cell with `Infinite` above every finite value.
pub fn summarize(rows: &[TrialResult], n_grid: &[usize], methods: &[Method]) -> Result<Vec<SummaryRow>> {
    let mut cells: BTreeMap<(usize, Method), Vec<Cost>> = BTreeMap::new();
    for r in rows {
        cells.entry((r.n, r.method)).or_default().push(r.excess_cost);
    }
    let mut out = Vec::with_capacity(n_grid.len() * methods.len());
    for &n in n_grid {
        for &m in methods {
            let mut v = cells.remove(&(n, m)).unwrap_or_default();
            if v.is_empty() {
                return Err(Error::config("bench", format!("no trials for cell N={n}, method={m}")));
            }
            v.sort();
            let unstable = v.iter().filter(|c| c.is_infinite()).count();
            out.push(SummaryRow {
                n,
                method: m,
                median: nearest_rank(&v, 0.5),
                q25: nearest_rank(&v, 0.25),
                q75: nearest_rank(&v, 0.75),
                unstable_fraction: unstable as f64 / v.len() as f64,
            });
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct TrialRecord {
    seed: u64,
    #[serde(rename = "N")]
    n: usize,
    method: Method,
    excess_cost: f64,
    stable: bool,
    wall_time: f64,
}

#[derive(Serialize, Deserialize)]
struct SummaryRecord {
    #[serde(rename = "N")]
    n: usize,
    method: Method,
    median: f64,
    q25: f64,
    q75: f64,
    unstable_fraction: f64,
}

/// Columns `seed,N,method,excess_cost,stable,wall_time`; unstable rows
/// carry `inf`.
pub fn write_trials(path: &Path, rows: &[TrialResult]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(TrialRecord {
            seed: r.seed,
            n: r.n,
            method: r.method,
            excess_cost: cost_field(r.excess_cost),
            stable: r.stable,
            wall_time: r.wall_time,
        })
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trials(path: &Path) -> Result<Vec<TrialResult>> {
    let mut r = csv_reader(path)?;
    let mut out = Vec::new();
    for rec in r.deserialize::<TrialRecord>() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let excess_cost = Cost::from_value(rec.excess_cost);
        if rec.excess_cost < 0.0 || rec.stable != excess_cost.is_finite() {
            return Err(Error::format(path, format!("inconsistent row for seed {} N {}", rec.seed, rec.n)));
        }
        out.push(TrialResult {
            seed: rec.seed,
            n: rec.n,
            method: rec.method,
            excess_cost,
            stable: rec.stable,
            wall_time: rec.wall_time,
        });
    }
    Ok(out)
}

/// Columns `N,method,median,q25,q75,unstable_fraction`.
pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(SummaryRecord {
            n: r.n,
            method: r.method,
            median: cost_field(r.median),
            q25: cost_field(r.q25),
            q75: cost_field(r.q75),
            unstable_fraction: r.unstable_fraction,
        })
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv_reader(path)?;
    r.deserialize::<SummaryRecord>()
        .map(|rec| {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            Ok(SummaryRow {
                n: rec.n,
                method: rec.method,
                median: Cost::from_value(rec.median),
                q25: Cost::from_value(rec.q25),
                q75: Cost::from_value(rec.q75),
                unstable_fraction: rec.unstable_fraction,
            })
        })
        .collect()
}

fn color(m: Method) -> &'static str {
    match m {
        Method::Ce => "#1f77b4",
        Method::Dr => "#d62728",
        Method::Rc => "#2ca02c",
    }
}

/// Log-log chart of the median excess cost per method with the
/// interquartile range shaded. Infinite quantiles are clipped to the top
/// of the axis; infinite medians are left out of the line.
pub fn plot_svg(rows: &[SummaryRow]) -> Document {
    let (w, h) = (640.0, 440.0);
    let (left, right, top, bottom) = (70.0, 110.0, 20.0, 50.0);
    let finite: Vec<f64> = rows
        .iter()
        .flat_map(|r| [r.q25, r.median, r.q75])
        .filter_map(|c| c.finite())
        .filter(|v| *v > 0.0)
        .collect();
    let ylo = finite.iter().copied().fold(f64::INFINITY, f64::min).log10().floor();
    let yhi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max).log10().ceil();
    let (ylo, yhi) = if ylo.is_finite() && yhi.is_finite() { (ylo, yhi.max(ylo + 1.0)) } else { (-3.0, 0.0) };
    let ns: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let xlo = ns.iter().copied().fold(f64::INFINITY, f64::min).max(1.0).log10().floor();
    let xhi = ns.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(10.0).log10().ceil().max(xlo + 1.0);
    let px = |n: f64| left + (n.log10() - xlo) / (xhi - xlo) * (w - left - right);
    let py = |v: f64| {
        let l = if v > 0.0 && v.is_finite() { v.log10().clamp(ylo, yhi) } else if v > 0.0 { yhi } else { ylo };
        top + (yhi - l) / (yhi - ylo) * (h - top - bottom)
    };

    let mut doc = Document::new()
        .set("width", w)
        .set("height", h)
        .set("viewBox", (0, 0, w, h))
        .add(Rectangle::new().set("width", w).set("height", h).set("fill", "white"));
    let mut axes = Group::new().set("stroke", "black").set("font-family", "sans-serif").set("font-size", 11);
    axes = axes
        .add(Line::new().set("x1", left).set("y1", h - bottom).set("x2", w - right).set("y2", h - bottom))
        .add(Line::new().set("x1", left).set("y1", top).set("x2", left).set("y2", h - bottom));
    for e in xlo as i32..=xhi as i32 {
        let x = px(10f64.powi(e));
        axes = axes
            .add(Line::new().set("x1", x).set("y1", h - bottom).set("x2", x).set("y2", h - bottom + 5.0))
            .add(Text::new(format!("1e{e}")).set("x", x).set("y", h - bottom + 18.0).set("text-anchor", "middle").set("stroke", "none"));
    }
    for e in ylo as i32..=yhi as i32 {
        let y = py(10f64.powi(e));
        axes = axes
            .add(Line::new().set("x1", left - 5.0).set("y1", y).set("x2", left).set("y2", y))
            .add(Text::new(format!("1e{e}")).set("x", left - 8.0).set("y", y + 4.0).set("text-anchor", "end").set("stroke", "none"));
    }
    axes = axes
        .add(Text::new("number of experiments N").set("x", (left + w - right) / 2.0).set("y", h - 12.0).set("text-anchor", "middle").set("stroke", "none"))
        .add(
            Text::new("excess cost")
                .set("transform", format!("translate(16,{}) rotate(-90)", (top + h - bottom) / 2.0))
                .set("text-anchor", "middle")
                .set("stroke", "none"),
        );
    doc = doc.add(axes);

    let mut methods: Vec<Method> = rows.iter().map(|r| r.method).collect();
    methods.sort();
    methods.dedup();
    for (i, m) in methods.iter().enumerate() {
        let mut series: Vec<&SummaryRow> = rows.iter().filter(|r| r.method == *m).collect();
        series.sort_by_key(|r| r.n);
        let band: Vec<&SummaryRow> = series.iter().copied().filter(|r| r.q25.is_finite()).collect();
        if band.len() > 1 {
            let upper = band.iter().map(|r| format!("{:.2},{:.2}", px(r.n as f64), py(cost_field(r.q75))));
            let lower = band.iter().rev().map(|r| format!("{:.2},{:.2}", px(r.n as f64), py(cost_field(r.q25))));
            let points: Vec<String> = upper.chain(lower).collect();
            doc = doc.add(Polygon::new().set("points", points.join(" ")).set("fill", color(*m)).set("fill-opacity", 0.2));
        }
        let mut d = String::new();
        for r in series.iter().filter(|r| r.median.is_finite()) {
            let cmd = if d.is_empty() { 'M' } else { 'L' };
            d.push_str(&format!("{cmd}{:.2},{:.2} ", px(r.n as f64), py(cost_field(r.median))));
        }
        if !d.is_empty() {
            doc = doc.add(SvgPath::new().set("d", d.trim_end()).set("fill", "none").set("stroke", color(*m)).set("stroke-width", 2));
        }
        let ly = top + 20.0 + 18.0 * i as f64;
        doc = doc
            .add(Line::new().set("x1", w - right + 10.0).set("y1", ly).set("x2", w - right + 35.0).set("y2", ly).set("stroke", color(*m)).set("stroke-width", 2))
            .add(
                Text::new(m.name().to_uppercase())
                    .set("x", w - right + 40.0)
                    .set("y", ly + 4.0)
                    .set("font-family", "sans-serif")
                    .set("font-size", 11),
            );
    }
    doc
}

pub fn write_plot(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    crate::io::write_text(path, &plot_svg(rows).to_string())
}
