//! File formats: datasets (CSV and binary), matrices, synthesis traces,
//! inequality-suite reports and pendulum episode logs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use drlqr_core::linalg::Mat;
use drlqr_core::pendulum::EpisodeLog;
use drlqr_core::synthesis::SynthesisReport;
use drlqr_core::sysid::{Dataset, Trajectory};
use drlqr_core::theory::InequalityReport;
use drlqr_core::Cost;

use crate::error::{Error, Result};

/// Leading bytes of the binary dataset format.
pub const DATASET_MAGIC: [u8; 8] = *b"DRLQRDS\0";
pub const DATASET_VERSION: u32 = 1;

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::WriterBuilder::new().from_writer(create(path)?))
}

pub(crate) fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    csv::ReaderBuilder::new().from_path(path).map_err(|e| Error::csv(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// `inf` for unstable controllers, the value otherwise.
pub fn cost_field(c: Cost) -> f64 {
    c.finite().unwrap_or(f64::INFINITY)
}

pub fn write_matrix(path: &Path, m: &Mat) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(create(path)?);
    for i in 0..m.nrows() {
        w.serialize(m.row(i).iter().copied().collect::<Vec<f64>>()).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<Mat> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec.map_err(|e| Error::csv(path, e))?);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::format(path, "matrix rows are empty or ragged"));
    }
    Ok(Mat::from_row_iterator(rows.len(), ncols, rows.into_iter().flatten()))
}

fn dataset_header(dx: usize, du: usize) -> Vec<String> {
    let mut h = vec!["traj".to_string(), "t".to_string()];
    h.extend((0..dx).map(|i| format!("x_{i}")));
    h.extend((0..du).map(|i| format!("u_{i}")));
    h
}

/// Writes one row per time step `t = 0..=T` of every trajectory; the input
/// fields of the final state row are empty.
pub fn write_dataset_csv(path: &Path, ds: &Dataset) -> Result<()> {
    let (dx, du) = (ds.dx(), ds.du());
    let mut w = csv_writer(path)?;
    let err = |e| Error::csv(path, e);
    w.write_record(dataset_header(dx, du)).map_err(err)?;
    let mut ryu = ryu::Buffer::new();
    for (i, tr) in ds.trajectories().iter().enumerate() {
        for t in 0..=tr.len() {
            let mut rec = vec![i.to_string(), t.to_string()];
            rec.extend((0..dx).map(|j| ryu.format(tr.states[(t, j)]).to_string()));
            for j in 0..du {
                rec.push(if t < tr.len() { ryu.format(tr.inputs[(t, j)]).to_string() } else { String::new() });
            }
            w.write_record(&rec).map_err(err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    let mut r = csv_reader(path)?;
    let header = r.headers().map_err(|e| Error::csv(path, e))?.clone();
    let dx = header.iter().filter(|h| h.starts_with("x_")).count();
    let du = header.iter().filter(|h| h.starts_with("u_")).count();
    if header.len() != 2 + dx + du || dx == 0 || du == 0 || header.iter().collect::<Vec<_>>() != dataset_header(dx, du) {
        return Err(Error::format(path, "expected columns traj,t,x_0..,u_0.."));
    }
    let mut trajs: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let parse = |s: &str, line: u64| {
        s.trim().parse::<f64>().map_err(|_| Error::format(path, format!("line {line}: bad number `{s}`")))
    };
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let traj: usize = rec[0].parse().map_err(|_| Error::format(path, format!("line {line}: bad traj index")))?;
        let t: usize = rec[1].parse().map_err(|_| Error::format(path, format!("line {line}: bad time index")))?;
        if traj == trajs.len() {
            trajs.push((Vec::new(), Vec::new()));
        }
        if traj + 1 != trajs.len() {
            return Err(Error::format(path, format!("line {line}: trajectories must be contiguous and ordered")));
        }
        let (states, inputs) = trajs.last_mut().expect("pushed above");
        if t * dx != states.len() {
            return Err(Error::format(path, format!("line {line}: time steps must be consecutive from 0")));
        }
        for j in 0..dx {
            states.push(parse(&rec[2 + j], line)?);
        }
        let u: Vec<&str> = (0..du).map(|j| &rec[2 + dx + j]).collect();
        if u.iter().all(|s| s.trim().is_empty()) {
            continue;
        }
        if inputs.len() != t * du {
            return Err(Error::format(path, format!("line {line}: input after the final state")));
        }
        for s in u {
            inputs.push(parse(s, line)?);
        }
    }
    let trajectories = trajs
        .into_iter()
        .map(|(s, u)| {
            let steps = u.len() / du;
            if s.len() != (steps + 1) * dx {
                return Err(Error::format(path, "each trajectory needs T inputs and T+1 states"));
            }
            Ok(Trajectory::new(Mat::from_row_slice(steps + 1, dx, &s), Mat::from_row_slice(steps, du, &u))?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(trajectories)?)
}

/// Binary layout: 8-byte magic, `u32` version, `u32` reserved, then `u32`
/// dx, du, N, T and the row-major `f64` states and inputs of each
/// trajectory; all little-endian.
pub fn write_dataset_bin(path: &Path, ds: &Dataset) -> Result<()> {
    let horizon = ds.horizon();
    if ds.trajectories().iter().any(|tr| tr.len() != horizon) {
        return Err(Error::format(path, "binary datasets need equal-length trajectories"));
    }
    let mut w = create(path)?;
    let mut buf = Vec::with_capacity(32);
    buf.extend_from_slice(&DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    for v in [ds.dx(), ds.du(), ds.len(), horizon] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    for tr in ds.trajectories() {
        for m in [&tr.states, &tr.inputs] {
            for i in 0..m.nrows() {
                for v in m.row(i).iter() {
                    w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dataset_bin(path: &Path) -> Result<Dataset> {
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut header = [0u8; 32];
    r.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
    if header[..8] != DATASET_MAGIC {
        return Err(Error::format(path, "not a dataset file (bad magic)"));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().expect("4 bytes")) as usize;
    if word(8) != DATASET_VERSION as usize {
        return Err(Error::format(path, format!("unsupported dataset version {}", word(8))));
    }
    let (dx, du, n, horizon) = (word(16), word(20), word(24), word(28));
    let mut read = |count: usize| -> Result<Vec<f64>> {
        let mut bytes = vec![0u8; count * 8];
        r.read_exact(&mut bytes).map_err(|e| Error::io(path, e))?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    };
    let mut trajectories = Vec::with_capacity(n);
    for _ in 0..n {
        let states = read((horizon + 1) * dx)?;
        let inputs = read(horizon * du)?;
        trajectories.push(Trajectory::new(
            Mat::from_row_slice(horizon + 1, dx, &states),
            Mat::from_row_slice(horizon, du, &inputs),
        )?);
    }
    if r.read(&mut [0u8; 1]).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::format(path, "trailing bytes after the last trajectory"));
    }
    Ok(Dataset::new(trajectories)?)
}

/// Reads a dataset, choosing the format by the `.bin` extension.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    if path.extension().is_some_and(|e| e == "bin") {
        read_dataset_bin(path)
    } else {
        read_dataset_csv(path)
    }
}

/// Columns `iter,objective,stabilized_fraction`.
pub fn write_synthesis_report(path: &Path, report: &SynthesisReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |e| Error::csv(path, e);
    w.write_record(["iter", "objective", "stabilized_fraction"]).map_err(err)?;
    for (i, (obj, frac)) in report.objective_trace.iter().zip(&report.stabilized_fraction_trace).enumerate() {
        w.serialize((i, cost_field(*obj), frac)).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Columns `check_name,margin,pass`.
pub fn write_suite_report(path: &Path, report: &InequalityReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |e| Error::csv(path, e);
    w.write_record(["check_name", "margin", "pass"]).map_err(err)?;
    for c in &report.checks {
        w.serialize((&c.name, c.margin, c.pass)).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Columns `t,psi,psi_dot,tau,cost`.
pub fn write_episode_log(path: &Path, log: &EpisodeLog) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |e| Error::csv(path, e);
    w.write_record(["t", "psi", "psi_dot", "tau", "cost"]).map_err(err)?;
    for s in &log.steps {
        w.serialize((s.t, s.state.psi, s.state.psi_dot, s.torque, s.cost)).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use drlqr_core::sysid::collect_dataset;
    use drlqr_core::{CostModel, SystemParams};

    fn small_dataset() -> Dataset {
        let theta = SystemParams::new(
            Mat::from_row_slice(2, 2, &[0.9, 0.1, 0.0, 0.8]),
            Mat::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap();
        let cm = CostModel::scaled_identity(2, 1, 1.0).unwrap();
        collect_dataset(&theta, &cm, 3, 4, &Mat::identity(1, 1), 9).unwrap()
    }

    fn same(a: &Dataset, b: &Dataset) -> bool {
        a.trajectories().iter().zip(b.trajectories()).all(|(x, y)| x.states == y.states && x.inputs == y.inputs)
            && a.len() == b.len()
    }

    #[test]
    fn dataset_csv_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let ds = small_dataset();
        write_dataset_csv(&path, &ds).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("traj,t,x_0,x_1,u_0\n"));
        assert_eq!(text.lines().count(), 1 + 3 * 5);
        assert!(same(&read_dataset(&path).unwrap(), &ds));
    }

    #[test]
    fn dataset_binary_round_trips_and_checks_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        let ds = small_dataset();
        write_dataset_bin(&path, &ds).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], b"DRLQRDS\0");
        assert_eq!(bytes.len(), 32 + 3 * (5 * 2 + 4) * 8);
        assert!(same(&read_dataset(&path).unwrap(), &ds));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Format { .. })));
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Io { .. })));
    }

    #[test]
    fn malformed_csv_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "traj,t,x_0,u_0\n0,0,0.0,1.0\n0,1,abc,\n").unwrap();
        let msg = read_dataset(&path).unwrap_err().to_string();
        assert!(msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn matrix_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = Mat::from_row_slice(2, 3, &[1.0, -2.5, 1e-17, 0.1, 3.0, -0.0]);
        write_matrix(&path, &m).unwrap();
        assert_eq!(read_matrix(&path).unwrap(), m);
    }
}
