//! Deterministic artifact I/O: CSV matrices, pretty JSON, and the per-run
//! seed sidecar. All floats in CSV output carry 17 significant digits so
//! re-running a command reproduces files byte for byte.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{io_err, CliError, Result};

/// 17-significant-digit scientific notation; lossless for f64.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Read the standard input schema: first row column ids, remaining rows
/// finite reals, no missing values. Line numbers in errors are 1-based.
pub fn read_matrix_csv(path: &Path) -> Result<(DMatrix<f64>, Vec<String>)> {
    let file = fs::File::open(path).map_err(io_err)?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);

    let mut ids: Vec<String> = Vec::new();
    let mut cells: Vec<f64> = Vec::new();
    let mut n_rows = 0usize;
    for (idx, record) in rdr.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|_| CliError::Parse { line })?;
        if idx == 0 {
            ids = record.iter().map(|s| s.to_string()).collect();
            let malformed = ids.is_empty()
                || ids.iter().any(|s| s.is_empty())
                || (1..ids.len()).any(|j| ids[..j].contains(&ids[j]));
            if malformed {
                return Err(CliError::Parse { line: 1 });
            }
            continue;
        }
        if record.len() != ids.len() {
            return Err(CliError::Parse { line });
        }
        for cell in record.iter() {
            let v: f64 = cell.trim().parse().map_err(|_| CliError::Parse { line })?;
            if !v.is_finite() {
                return Err(CliError::Parse { line });
            }
            cells.push(v);
        }
        n_rows += 1;
    }
    if ids.is_empty() {
        return Err(CliError::Parse { line: 1 });
    }
    Ok((DMatrix::from_row_slice(n_rows, ids.len(), &cells), ids))
}

/// Write a matrix in the input schema with deterministic formatting.
pub fn write_matrix_csv(path: &Path, ids: &[String], data: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Io(e.to_string()))?;
    w.write_record(ids).map_err(|e| CliError::Io(e.to_string()))?;
    for r in 0..data.nrows() {
        let row: Vec<String> = (0..data.ncols()).map(|c| fmt_float(data[(r, c)])).collect();
        w.write_record(&row).map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.flush().map_err(io_err)
}

/// Write an arbitrary CSV table: fixed header, pre-rendered rows.
pub fn write_table_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Io(e.to_string()))?;
    w.write_record(header).map_err(|e| CliError::Io(e.to_string()))?;
    for row in rows {
        w.write_record(row).map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.flush().map_err(io_err)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut buf = serde_json::to_vec_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    buf.push(b'\n');
    fs::write(path, buf).map_err(io_err)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err)?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("invalid JSON in {}: {e}", path.display())))
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err)
}

/// Record the command, root seed, and resolved parameters next to the
/// outputs. Thread count is deliberately omitted: results do not depend on
/// it.
pub fn write_sidecar(
    out_dir: &Path,
    command: &str,
    seed: u64,
    params: serde_json::Value,
) -> Result<()> {
    let meta = serde_json::json!({
        "command": command,
        "seed": seed,
        "params": params,
    });
    write_json(&out_dir.join("run_meta.json"), &meta)
}
