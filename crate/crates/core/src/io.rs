//! File formats: CSV tables and JSON documents.
//!
//! Floats are written with 17 significant digits so that a value read back
//! is bit-identical to the one written.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Row-major copy of a matrix.
pub fn matrix_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Builds a matrix from rows; every row must have the same length.
pub fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<Mat> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::DimensionMismatch("ragged matrix rows".into()));
    }
    Ok(Mat::from_fn(n, m, |i, j| rows[i][j]))
}

/// Formats a float with 17 significant digits (round-trip exact).
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        let s = format!("{v:.16e}");
        match s.parse::<f64>() {
            Ok(back) if back == v => s,
            _ => format!("{v:e}"),
        }
    } else {
        format!("{v}")
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::format(path, e.to_string()))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes a CSV table with the given header; cells are preformatted strings.
pub fn write_csv(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a CSV table, checking the header, and returns the raw records.
pub fn read_csv(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let got = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if got.iter().map(str::trim).ne(header.iter().copied()) {
        return Err(Error::format(
            path,
            format!(
                "expected header {:?}, found {:?}",
                header,
                got.iter().collect::<Vec<_>>()
            ),
        ));
    }
    r.records()
        .map(|rec| rec.map_err(|e| csv_err(path, e)))
        .collect()
}

/// Parses field `i` of a record.
pub fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize) -> Result<T> {
    let raw = rec.get(i).unwrap_or("").trim();
    raw.parse().map_err(|_| {
        let line = rec.position().map_or(0, |p| p.line());
        Error::format(
            path,
            format!("line {line}: cannot parse field {i} ({raw:?})"),
        )
    })
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::format(path, format!("{other:?}")),
        }
    } else {
        Error::format(path, e.to_string())
    }
}
