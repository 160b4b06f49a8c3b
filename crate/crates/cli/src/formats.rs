//! File formats: measurement and table CSV, parameter JSON.

use std::fs;
use std::path::Path;

use ksmooth_core::{MeasurementSet, ParameterSet};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Marker written for a missing measurement.
pub const MISSING: &str = "?";

/// Formats a float with 17 significant digits, which round-trips exactly.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".to_string()
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum HeaderMode {
    /// Treat the first row as a header if it holds a non-numeric field.
    #[default]
    Auto,
    Yes,
    No,
}

fn is_value_field(s: &str) -> bool {
    s.is_empty() || s == MISSING || s.parse::<f64>().is_ok()
}

/// Parses a measurement CSV: one row per time step, one column per output,
/// empty or `?` for a missing value.
pub fn parse_measurements(text: &str, header: HeaderMode, path: &Path) -> CliResult<MeasurementSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows: Vec<(u64, csv::StringRecord)> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| CliError::parse(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        rows.push((line, rec));
    }
    let skip_header = match header {
        HeaderMode::Yes => true,
        HeaderMode::No => false,
        HeaderMode::Auto => rows.first().is_some_and(|(_, r)| !r.iter().all(is_value_field)),
    };
    if skip_header && !rows.is_empty() {
        rows.remove(0);
    }
    let Some((_, first)) = rows.first() else {
        return Err(CliError::parse(path, "no measurement rows"));
    };
    let p = first.len();
    let mut values = Vec::with_capacity(rows.len() * p);
    for (line, rec) in &rows {
        if rec.len() != p {
            return Err(CliError::parse(
                path,
                format!("line {line}: expected {p} fields, found {}", rec.len()),
            ));
        }
        for (col, field) in rec.iter().enumerate() {
            if field.is_empty() || field == MISSING {
                values.push(None);
                continue;
            }
            let v: f64 = field.parse().map_err(|_| {
                CliError::parse(path, format!("line {line}, column {}: invalid number {field:?}", col + 1))
            })?;
            if !v.is_finite() {
                return Err(CliError::parse(
                    path,
                    format!("line {line}, column {}: non-finite value {field:?}", col + 1),
                ));
            }
            values.push(Some(v));
        }
    }
    Ok(MeasurementSet::from_rows(rows.len(), p, values)?)
}

pub fn read_measurements(path: &Path, header: HeaderMode) -> CliResult<MeasurementSet> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_measurements(&text, header, path)
}

fn header_line(prefix: &str, k: usize) -> String {
    (1..=k).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>().join(",")
}

/// Measurement CSV with a `y1,...,yp` header.
pub fn format_measurements(meas: &MeasurementSet) -> String {
    let p = meas.p();
    let mut out = header_line("y", p);
    out.push('\n');
    for t in 0..meas.len_t() {
        let row: Vec<String> = (0..p)
            .map(|i| meas.get(t, i).map_or_else(|| MISSING.to_string(), fmt_f64))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// One row per time step with a `{prefix}1,...` header.
pub fn format_table(m: &DMatrix<f64>, prefix: &str) -> String {
    let mut out = header_line(prefix, m.ncols());
    out.push('\n');
    for r in 0..m.nrows() {
        let row: Vec<String> = m.row(r).iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// A dense matrix as a list of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Matrix(pub Vec<Vec<f64>>);

impl Matrix {
    pub fn to_dmatrix(&self, what: &str) -> CliResult<DMatrix<f64>> {
        let rows = self.0.len();
        let cols = self.0.first().map_or(0, Vec::len);
        if let Some((r, row)) = self.0.iter().enumerate().find(|(_, row)| row.len() != cols) {
            return Err(CliError::config(format!(
                "{what}: row {} has {} entries, expected {cols}",
                r + 1,
                row.len()
            )));
        }
        Ok(DMatrix::from_fn(rows, cols, |i, j| self.0[i][j]))
    }
}

impl From<&DMatrix<f64>> for Matrix {
    fn from(m: &DMatrix<f64>) -> Self {
        Matrix((0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect())
    }
}

/// The four parameter matrices as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsDoc {
    #[serde(rename = "A")]
    pub a: Matrix,
    #[serde(rename = "Wisqrt")]
    pub wisqrt: Matrix,
    #[serde(rename = "C")]
    pub c: Matrix,
    #[serde(rename = "Visqrt")]
    pub visqrt: Matrix,
}

impl ParamsDoc {
    pub fn to_params(&self) -> CliResult<ParameterSet> {
        Ok(ParameterSet::new(
            self.a.to_dmatrix("A")?,
            self.wisqrt.to_dmatrix("Wisqrt")?,
            self.c.to_dmatrix("C")?,
            self.visqrt.to_dmatrix("Visqrt")?,
        )?)
    }
}

impl From<&ParameterSet> for ParamsDoc {
    fn from(p: &ParameterSet) -> Self {
        Self {
            a: (&p.A).into(),
            wisqrt: (&p.Wisqrt).into(),
            c: (&p.C).into(),
            visqrt: (&p.Visqrt).into(),
        }
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::parse(path, e))
}

pub fn read_params(path: &Path) -> CliResult<ParameterSet> {
    read_json::<ParamsDoc>(path)?.to_params()
}

pub fn format_params(p: &ParameterSet) -> String {
    to_json(&ParamsDoc::from(p))
}

pub fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}
