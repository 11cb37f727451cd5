//! CSV and JSON emission.

use std::fmt::Write as _;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::action::ActionCurve;
use crate::quantum::{EnsembleCurve, FidelityCurve};

/// A single CSV field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// Seventeen significant digits, enough to round-trip any double.
pub fn format_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format_f64(*v),
            Cell::Text(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
            Cell::Text(s) => s.clone(),
        }
    }
}

/// Rows under a fixed header.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(columns: &[S]) -> Self {
        Table {
            columns: columns.iter().map(|c| c.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// Appends a row; panics if its width differs from the header.
    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(Cell::render).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(self.to_csv().as_bytes())
    }

    /// Column-major JSON object `{name: [values...]}` preserving column order.
    pub fn to_json(&self) -> serde_json::Value {
        let mut obj = serde_json::Map::new();
        for (j, name) in self.columns.iter().enumerate() {
            let col: Vec<serde_json::Value> = self
                .rows
                .iter()
                .map(|r| match &r[j] {
                    Cell::Int(v) => serde_json::json!(v),
                    Cell::Float(v) => serde_json::Number::from_f64(*v)
                        .map(serde_json::Value::Number)
                        .unwrap_or_else(|| serde_json::Value::String(format_f64(*v))),
                    Cell::Text(s) => serde_json::json!(s),
                })
                .collect();
            obj.insert(name.clone(), serde_json::Value::Array(col));
        }
        serde_json::Value::Object(obj)
    }

    /// Values of a numeric column.
    pub fn column_f64(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        self.rows
            .iter()
            .map(|r| match &r[j] {
                Cell::Int(v) => Some(*v as f64),
                Cell::Float(v) => Some(*v),
                Cell::Text(_) => None,
            })
            .collect()
    }
}

/// Columns `t, m_re, m_im, M`.
pub fn fidelity_table(curve: &FidelityCurve) -> Table {
    let mut table = Table::new(&["t", "m_re", "m_im", "M"]);
    for ((t, m), f) in curve.t.iter().zip(&curve.m).zip(&curve.fidelity) {
        table.push(vec![(*t).into(), m.re.into(), m.im.into(), (*f).into()]);
    }
    table
}

/// Columns `t, M_mean, M_mean_err, geo_mean, mean_lnM, mean_lnM_err`.
pub fn ensemble_table(curve: &EnsembleCurve) -> Table {
    let mut table = Table::new(&["t", "M_mean", "M_mean_err", "geo_mean", "mean_lnM", "mean_lnM_err"]);
    let geo = curve.geometric_mean();
    for i in 0..curve.t.len() {
        table.push(vec![
            curve.t[i].into(),
            curve.mean[i].into(),
            curve.mean_std_err[i].into(),
            geo[i].into(),
            curve.mean_log[i].into(),
            curve.mean_log_std_err[i].into(),
        ]);
    }
    table
}

/// Columns `p0, dS_over_eps`.
pub fn action_curve_table(curve: &ActionCurve) -> Table {
    let mut table = Table::new(&["p0", "dS_over_eps"]);
    for (p, s) in curve.p0.iter().zip(&curve.ds_over_eps) {
        table.push(vec![(*p).into(), (*s).into()]);
    }
    table
}
