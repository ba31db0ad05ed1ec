//! Columnar weight snapshots: `traj_<run_id>_<layer>_<step>.csv`.
//!
//! One line per row of the weight matrix: `row,w0,w1,…,w{m-1}` header, then
//! the row index and its entries at 17 significant digits.

use std::path::{Path, PathBuf};

use crate::constraint::WeightMatrix;
use crate::error::{Error, Result};
use crate::numeric::fmt17;

/// File name for a 1-based `layer` and step `step`.
pub fn snapshot_file_name(run_id: &str, layer: usize, step: usize) -> String {
    format!("traj_{run_id}_{layer}_{step}.csv")
}

pub fn snapshot_to_string(w: &WeightMatrix) -> String {
    let mut out = String::from("row");
    for j in 0..w.cols() {
        out.push_str(&format!(",w{j}"));
    }
    out.push('\n');
    for i in 0..w.rows() {
        out.push_str(&i.to_string());
        for v in w.row(i) {
            out.push(',');
            out.push_str(&fmt17(*v));
        }
        out.push('\n');
    }
    out
}

pub fn write_snapshot(dir: &Path, run_id: &str, layer: usize, step: usize, w: &WeightMatrix) -> Result<PathBuf> {
    let path = dir.join(snapshot_file_name(run_id, layer, step));
    std::fs::write(&path, snapshot_to_string(w)).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn bad(message: String) -> Error {
    Error::Format {
        what: "snapshot",
        message,
    }
}

/// Parses snapshot text back into the exact matrix.
pub fn parse_snapshot(text: &str) -> Result<WeightMatrix> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty snapshot".into()))?;
    let mut cols = header.split(',');
    if cols.next() != Some("row") {
        return Err(bad("header must start with `row`".into()));
    }
    let mut m = 0;
    for (j, name) in cols.enumerate() {
        if name != format!("w{j}") {
            return Err(bad(format!("unexpected column name {name:?}")));
        }
        m += 1;
    }
    if m == 0 {
        return Err(bad("snapshot has no weight columns".into()));
    }
    let mut data = Vec::new();
    let mut n = 0;
    for (i, line) in lines.enumerate() {
        let mut fields = line.split(',');
        let idx = fields.next().unwrap_or("");
        if idx.parse::<usize>().ok() != Some(i) {
            return Err(bad(format!("line {}: expected row index {i}, got {idx:?}", i + 2)));
        }
        let before = data.len();
        for f in fields {
            let v: f64 = f
                .parse()
                .map_err(|_| bad(format!("line {}: cannot parse {f:?}", i + 2)))?;
            if !v.is_finite() {
                return Err(bad(format!("line {}: non-finite entry", i + 2)));
            }
            data.push(v);
        }
        if data.len() - before != m {
            return Err(bad(format!(
                "line {}: expected {m} entries, got {}",
                i + 2,
                data.len() - before
            )));
        }
        n += 1;
    }
    if n == 0 {
        return Err(bad("snapshot has no rows".into()));
    }
    WeightMatrix::from_rows(n, m, data)
}

pub fn read_snapshot(path: &Path) -> Result<WeightMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_snapshot(&text)
}
