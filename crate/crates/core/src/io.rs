//! File formats: datasets as CSV, reports as JSON, QQ pairs and
//! state-evolution trajectories as CSV.
//!
//! A dataset file has a header row whose first column is `y`; every other
//! column is a predictor. Floats are written with Rust's shortest
//! round-trip formatting, so a write followed by a read is lossless.

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::state_evolution::SeParams;

/// Reads a dataset from a CSV file.
pub fn parse_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    parse_dataset_from(File::open(path)?)
}

/// Reads a dataset from any CSV source. Rows are numbered from 1 after the
/// header in error messages.
pub fn parse_dataset_from<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.first().map(String::as_str) != Some("y") {
        return Err(Error::InvalidDataset(format!(
            "first header column must be `y`, found `{}`",
            header.first().cloned().unwrap_or_default()
        )));
    }
    if header.len() < 2 {
        return Err(Error::InvalidDataset("no predictor columns".into()));
    }
    let p = header.len() - 1;
    let mut y = Vec::new();
    let mut x = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        for (c, cell) in record.iter().enumerate() {
            let column = header[c].clone();
            let cell = cell.trim();
            if cell.is_empty() {
                return Err(Error::MalformedCell {
                    row,
                    column,
                    reason: "missing value".into(),
                });
            }
            let v: f64 = cell.parse().map_err(|_| Error::MalformedCell {
                row,
                column: column.clone(),
                reason: format!("`{cell}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::MalformedCell {
                    row,
                    column,
                    reason: format!("`{cell}` is not finite"),
                });
            }
            if c == 0 {
                y.push(v);
            } else {
                x.push(v);
            }
        }
    }
    let n = y.len();
    if n < 2 {
        return Err(Error::InvalidDataset(format!("need at least 2 rows, found {n}")));
    }
    Dataset::new(DVector::from_vec(y), DMatrix::from_row_slice(n, p, &x))
}

/// Writes a dataset with header `y,x1,…,xp`.
pub fn write_dataset(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    write_dataset_to(file, data)
}

pub fn write_dataset_to<W: Write>(writer: W, data: &Dataset) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["y".to_string()];
    header.extend((1..=data.p()).map(|j| format!("x{j}")));
    wtr.write_record(&header)?;
    for i in 0..data.n() {
        let mut rec = Vec::with_capacity(data.p() + 1);
        rec.push(data.y[i].to_string());
        rec.extend(data.x.row(i).iter().map(|v| v.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Pretty JSON to `path`, or to standard output when `path` is `None`.
pub fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            serde_json::to_writer_pretty(&mut w, value)?;
            writeln!(w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            serde_json::to_writer_pretty(&mut w, value)?;
            writeln!(w)?;
        }
    }
    Ok(())
}

/// QQ pairs as CSV with columns `theoretical,sample`.
pub fn write_qq_csv<W: Write>(writer: W, pairs: &[(f64, f64)]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["theoretical", "sample"])?;
    for (a, b) in pairs {
        wtr.write_record([a.to_string(), b.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// State-evolution trajectory as CSV with columns
/// `t,sigma_bar_sq,zeta_bar_sq,theta,b,omega`.
pub fn write_se_csv<W: Write>(writer: W, se: &SeParams) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["t", "sigma_bar_sq", "zeta_bar_sq", "theta", "b", "omega"])?;
    for t in 0..se.len() {
        wtr.write_record([
            t.to_string(),
            se.sigma_bar_sq[t].to_string(),
            se.zeta_bar_sq[t].to_string(),
            se.theta_seq[t].to_string(),
            se.b_seq[t].to_string(),
            se.omega_seq[t].to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Opens `path` for writing, or standard output when `None`.
pub fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout()),
    })
}
