//! Text formats for matrices.
//!
//! JSON input is either a bare array of rows or `{"n": int, "entries": [[...]]}`.
//! CSV has one row per line, comma-separated entries, and no header.
//! Serialization writes 17 significant digits so parsing it back is exact.

use std::fmt::Write as _;
use std::str::FromStr;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::matrix::NonNegMatrix;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

impl Format {
    /// Guesses the format from a file name; anything not ending in `.csv` is JSON.
    pub fn from_path(path: &str) -> Self {
        if path.to_ascii_lowercase().ends_with(".csv") {
            Format::Csv
        } else {
            Format::Json
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            other => Err(Error::Parse(format!("unknown matrix format '{other}'"))),
        }
    }
}

pub fn parse_matrix<T: Scalar>(text: &str, format: Format) -> Result<NonNegMatrix<T>> {
    let rows = match format {
        Format::Json => json_rows(text)?,
        Format::Csv => csv_rows(text)?,
    };
    let rows: Vec<Vec<T>> = rows
        .into_iter()
        .map(|r| r.into_iter().map(T::of).collect())
        .collect();
    NonNegMatrix::from_rows(&rows)
}

pub fn serialize_matrix<T: Scalar>(m: &NonNegMatrix<T>, format: Format) -> String {
    let mut out = String::new();
    match format {
        Format::Json => {
            let _ = write!(out, "{{\"n\":{},\"entries\":[", m.n());
            for i in 0..m.n() {
                if i > 0 {
                    out.push(',');
                }
                out.push('[');
                for (j, x) in m.row(i).iter().enumerate() {
                    if j > 0 {
                        out.push(',');
                    }
                    let _ = write!(out, "{:.16e}", x.as_f64());
                }
                out.push(']');
            }
            out.push_str("]}");
        }
        Format::Csv => {
            for i in 0..m.n() {
                let line: Vec<String> =
                    m.row(i).iter().map(|x| format!("{:.16e}", x.as_f64())).collect();
                out.push_str(&line.join(","));
                out.push('\n');
            }
        }
    }
    out
}

/// Reads an array of numeric rows from a JSON value.
pub(crate) fn rows_from_value(v: &Value) -> Result<Vec<Vec<f64>>> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::Parse("expected an array of rows".into()))?;
    arr.iter()
        .enumerate()
        .map(|(i, row)| {
            row.as_array()
                .ok_or_else(|| Error::Parse(format!("row {i} is not an array")))?
                .iter()
                .map(|x| {
                    x.as_f64()
                        .ok_or_else(|| Error::Parse(format!("non-numeric entry in row {i}")))
                })
                .collect()
        })
        .collect()
}

fn json_rows(text: &str) -> Result<Vec<Vec<f64>>> {
    let v: Value = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    match &v {
        Value::Array(_) => rows_from_value(&v),
        Value::Object(obj) => {
            let entries = obj
                .get("entries")
                .ok_or_else(|| Error::Parse("missing 'entries'".into()))?;
            let rows = rows_from_value(entries)?;
            if let Some(n) = obj.get("n") {
                let n = n
                    .as_u64()
                    .ok_or_else(|| Error::Parse("'n' must be a non-negative integer".into()))?;
                if n as usize != rows.len() {
                    return Err(Error::Shape(format!(
                        "'n' = {n} but {} rows given",
                        rows.len()
                    )));
                }
            }
            Ok(rows)
        }
        _ => Err(Error::Parse("expected an array or an object".into())),
    }
}

fn csv_rows(text: &str) -> Result<Vec<Vec<f64>>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, line)| {
            line.split(',')
                .map(|tok| {
                    tok.trim().parse::<f64>().map_err(|e| {
                        Error::Parse(format!("row {i}: cannot parse '{}': {e}", tok.trim()))
                    })
                })
                .collect()
        })
        .collect()
}
