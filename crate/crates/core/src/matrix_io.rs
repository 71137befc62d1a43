//! Plain-text matrix format: a `rows cols` header line followed by the
//! row-major entries, one row per line, at 17 significant digits.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Mat, Vector};

pub fn format_matrix(m: &Mat) -> String {
    let mut out = format!("{} {}\n", m.nrows(), m.ncols());
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

pub fn parse_matrix(text: &str) -> Result<Mat> {
    let mut tokens = text.split_whitespace();
    let mut header = |what: &str| -> Result<usize> {
        tokens
            .next()
            .ok_or_else(|| Error::config(format!("matrix text is missing the {what} count")))?
            .parse::<usize>()
            .map_err(|e| Error::config(format!("bad {what} count: {e}")))
    };
    let rows = header("row")?;
    let cols = header("column")?;
    let values = tokens
        .map(|t| t.parse::<f64>().map_err(|e| Error::config(format!("bad matrix entry {t:?}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    if values.len() != rows * cols {
        return Err(Error::config(format!(
            "matrix header says {rows}x{cols} but {} values follow",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::config("matrix entries must be finite"));
    }
    Ok(Mat::from_row_slice(rows, cols, &values))
}

pub fn write_matrix(path: &Path, m: &Mat) -> Result<()> {
    std::fs::write(path, format_matrix(m)).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<Mat> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matrix(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Writes a vector as a single-row matrix.
pub fn write_vector(path: &Path, v: &Vector) -> Result<()> {
    write_matrix(path, &Mat::from_row_slice(1, v.len(), v.as_slice()))
}
