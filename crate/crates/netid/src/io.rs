//! File formats: edge lists live in `graph`; this module covers matrices,
//! trajectories and AP logs.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::graph::Family;
use crate::inverse::{estimate_linear_rate, ApRun, Rate};

/// `{"n": N, "family": "...", "data": [row-major]}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixFile {
    pub n: usize,
    pub family: Family,
    pub data: Vec<f64>,
}

impl MatrixFile {
    pub fn new(m: &DMatrix<f64>, family: Family) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension(format!("matrix container holds N x N, got {:?}", m.shape())));
        }
        Ok(MatrixFile {
            n: m.nrows(),
            family,
            data: m.transpose().as_slice().to_vec(),
        })
    }

    pub fn matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.n * self.n {
            return Err(Error::Dimension(format!("{} entries for n = {}", self.data.len(), self.n)));
        }
        Ok(DMatrix::from_row_slice(self.n, self.n, &self.data))
    }
}

pub fn write_matrix_json(path: &Path, m: &DMatrix<f64>, family: Family) -> Result<()> {
    let text = serde_json::to_string_pretty(&MatrixFile::new(m, family)?)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_matrix_json(path: &Path) -> Result<(DMatrix<f64>, Family)> {
    let f: MatrixFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    Ok((f.matrix()?, f.family))
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Invalid(format!("csv: {other:?}")),
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Invalid(format!("not a number: '{s}'")))
}

/// One matrix row per line, no header.
pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err)?;
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|x| x.to_string())).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(csv_err)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        rows.push(rec.iter().map(parse_f64).collect::<Result<_>>()?);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySidecar {
    pub tau: f64,
    pub noise_state_var: f64,
    pub noise_obs_var: f64,
    pub seed: Option<u64>,
}

/// Writes `k, u_1..u_N, y_1..y_L` rows to `csv_path` and the run metadata to
/// `sidecar_path`. States are not persisted.
pub fn write_trajectory(csv_path: &Path, sidecar_path: &Path, t: &Trajectory) -> Result<()> {
    let (p, l) = (t.inputs.nrows(), t.outputs.nrows());
    let mut w = csv::Writer::from_path(csv_path).map_err(csv_err)?;
    let mut header = vec!["k".to_string()];
    header.extend((1..=p).map(|i| format!("u_{i}")));
    header.extend((1..=l).map(|i| format!("y_{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for k in 0..t.len() {
        let mut rec = vec![k.to_string()];
        rec.extend(t.inputs.column(k).iter().map(|x| x.to_string()));
        rec.extend(t.outputs.column(k).iter().map(|x| x.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    let side = TrajectorySidecar {
        tau: t.tau,
        noise_state_var: t.noise_state_var,
        noise_obs_var: t.noise_obs_var,
        seed: t.seed,
    };
    fs::write(sidecar_path, serde_json::to_string_pretty(&side)? + "\n")?;
    Ok(())
}

pub fn read_trajectory(csv_path: &Path, sidecar_path: &Path) -> Result<Trajectory> {
    let side: TrajectorySidecar = serde_json::from_str(&fs::read_to_string(sidecar_path)?)?;
    let mut r = csv::Reader::from_path(csv_path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.clone();
    let p = header.iter().filter(|h| h.starts_with("u_")).count();
    let l = header.iter().filter(|h| h.starts_with("y_")).count();
    if header.len() != 1 + p + l || header.get(0) != Some("k") {
        return Err(Error::Invalid("trajectory header must be k, u_1..u_N, y_1..y_L".into()));
    }
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let k: usize = rec[0].trim().parse().map_err(|_| Error::Invalid(format!("bad step index '{}'", &rec[0])))?;
        if k != row {
            return Err(Error::Invalid(format!("step {k} found at row {row}")));
        }
        cols.push(rec.iter().skip(1).map(parse_f64).collect::<Result<_>>()?);
    }
    let q = cols.len();
    Ok(Trajectory {
        inputs: DMatrix::from_fn(p, q, |i, k| cols[k][i]),
        outputs: DMatrix::from_fn(l, q, |i, k| cols[k][p + i]),
        states: None,
        tau: side.tau,
        noise_state_var: side.noise_state_var,
        noise_obs_var: side.noise_obs_var,
        seed: side.seed,
    })
}

/// `iteration, proj_residual, step_delta`
pub fn write_ap_csv(path: &Path, run: &ApRun) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["iteration", "proj_residual", "step_delta"]).map_err(csv_err)?;
    for (k, (r, d)) in run.proj_residual.iter().zip(&run.step_delta).enumerate() {
        w.write_record([k.to_string(), r.to_string(), d.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn ap_summary(run: &ApRun) -> Value {
    let rate = match estimate_linear_rate(run) {
        Ok(Rate::Linear { r, r_squared }) => json!({"kind": "linear", "r": r, "r_squared": r_squared}),
        Ok(Rate::NotLinear { slope }) => json!({"kind": "not_linear", "slope": slope}),
        Err(e) => json!({"kind": "unavailable", "reason": e.to_string()}),
    };
    json!({
        "converged": run.converged,
        "iterations": run.iterations,
        "final_residual": run.final_residual,
        "final_step_delta": run.step_delta.last(),
        "fixed_point_escapes": run.fixed_point_escapes,
        "rate": rate,
    })
}

/// CSV log, JSON summary and the final matrix next to each other, named
/// `<stem>.csv`, `<stem>.json` and `<stem>_matrix.json`.
pub fn write_ap_run(dir: &Path, stem: &str, run: &ApRun) -> Result<()> {
    write_ap_csv(&dir.join(format!("{stem}.csv")), run)?;
    write_json(&dir.join(format!("{stem}.json")), &ap_summary(run))?;
    write_matrix_json(&dir.join(format!("{stem}_matrix.json")), &run.final_matrix, Family::Generic)
}

pub fn write_json(path: &Path, v: &Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)? + "\n")?;
    Ok(())
}

/// Named columns of equal length, written with a header.
pub fn write_columns(path: &Path, names: &[&str], cols: &[Vec<f64>]) -> Result<()> {
    if names.len() != cols.len() || cols.windows(2).any(|w| w[0].len() != w[1].len()) {
        return Err(Error::Dimension("column names and lengths disagree".into()));
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(names).map_err(csv_err)?;
    for i in 0..cols.first().map_or(0, Vec::len) {
        w.write_record(cols.iter().map(|c| c[i].to_string())).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
