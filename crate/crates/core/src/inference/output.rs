use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::Tensor;
use crate::models::{csv_writer, write_record};

/// Writes a header row then one row per tensor row. Values use the shortest
/// round-tripping decimal form, so files are byte-stable across runs.
pub fn write_matrix_csv(path: &Path, header: &[String], data: &Tensor) -> Result<()> {
    if header.len() != data.cols() {
        return Err(Error::Dimension(format!(
            "{} header columns for a {}-column table",
            header.len(),
            data.cols()
        )));
    }
    let mut w = csv_writer(path)?;
    write_record(&mut w, path, header)?;
    for r in 0..data.rows() {
        write_record(&mut w, path, data.row_slice(r).iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn columns(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

pub(crate) fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_record(&mut w, path, header)?;
    for row in rows {
        write_record(&mut w, path, row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
