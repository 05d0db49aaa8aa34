//! Result rows and their CSV / JSON encodings.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::config::{Format, RunConfig};

pub const COMMON_COLUMNS: [&str; 12] = [
    "n",
    "d",
    "epsilon",
    "theta",
    "rate_nats",
    "rate_bits",
    "dispersion_nats2",
    "bound_kind",
    "log_M_nats",
    "mc_stderr",
    "seed",
    "wall_ms",
];
pub const STATUS_COLUMN: &str = "status";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(u64),
    Float(f64),
    Text(String),
}

impl Value {
    /// Text form used in CSV; floats carry 17 significant digits.
    pub fn render(&self) -> String {
        match self {
            Value::Int(i) => i.to_string(),
            Value::Float(x) => format!("{x:.16e}"),
            Value::Text(s) => s.clone(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Float(x) => Some(*x),
            Value::Text(_) => None,
        }
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Float(x)
    }
}

impl From<u64> for Value {
    fn from(x: u64) -> Self {
        Value::Int(x)
    }
}

impl From<usize> for Value {
    fn from(x: usize) -> Self {
        Value::Int(x as u64)
    }
}

impl From<bool> for Value {
    fn from(x: bool) -> Self {
        Value::Text(x.to_string())
    }
}

impl From<&str> for Value {
    fn from(x: &str) -> Self {
        Value::Text(x.to_string())
    }
}

/// One output row: named cells, missing ones are left empty.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Row {
    cells: BTreeMap<String, Value>,
    /// Extra column names in first-set order.
    extra_order: Vec<String>,
}

impl Row {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(mut self, column: &str, value: impl Into<Value>) -> Self {
        self.put(column, value);
        self
    }

    pub fn put(&mut self, column: &str, value: impl Into<Value>) {
        let is_common = COMMON_COLUMNS.contains(&column) || column == STATUS_COLUMN;
        if !is_common && !self.cells.contains_key(column) {
            self.extra_order.push(column.to_string());
        }
        self.cells.insert(column.to_string(), value.into());
    }

    /// Sets both rate columns from a rate in nats.
    pub fn rate(self, nats: f64) -> Self {
        self.set("rate_nats", nats)
            .set("rate_bits", nats / std::f64::consts::LN_2)
    }

    pub fn get(&self, column: &str) -> Option<&Value> {
        self.cells.get(column)
    }

    pub fn f64(&self, column: &str) -> Option<f64> {
        self.get(column).and_then(Value::as_f64)
    }

    pub fn text(&self, column: &str) -> Option<&str> {
        match self.get(column) {
            Some(Value::Text(s)) => Some(s),
            _ => None,
        }
    }

    pub fn status(&self) -> &str {
        self.text(STATUS_COLUMN).unwrap_or("ok")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub rows: Vec<Row>,
}

impl Table {
    pub fn push(&mut self, row: Row) {
        self.rows.push(row);
    }

    pub fn columns(&self) -> Vec<String> {
        let mut cols: Vec<String> = COMMON_COLUMNS.iter().map(|s| s.to_string()).collect();
        for r in &self.rows {
            for c in &r.extra_order {
                if !cols.contains(c) {
                    cols.push(c.clone());
                }
            }
        }
        cols.push(STATUS_COLUMN.to_string());
        cols
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let cols = self.columns();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&cols).expect("in-memory write");
        for r in &self.rows {
            let rec: Vec<String> = cols
                .iter()
                .map(|c| {
                    if c == STATUS_COLUMN {
                        r.status().to_string()
                    } else {
                        r.get(c).map(Value::render).unwrap_or_default()
                    }
                })
                .collect();
            w.write_record(&rec).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    pub fn to_json(&self, config: &RunConfig) -> Vec<u8> {
        let cols = self.columns();
        let rows: Vec<serde_json::Map<String, serde_json::Value>> = self
            .rows
            .iter()
            .map(|r| {
                cols.iter()
                    .map(|c| {
                        let v = if c == STATUS_COLUMN {
                            serde_json::Value::from(r.status())
                        } else {
                            match r.get(c) {
                                None => serde_json::Value::Null,
                                Some(Value::Int(i)) => serde_json::Value::from(*i),
                                Some(Value::Float(x)) => float_json(*x),
                                Some(Value::Text(s)) => serde_json::Value::from(s.as_str()),
                            }
                        };
                        (c.clone(), v)
                    })
                    .collect()
            })
            .collect();
        let doc = serde_json::json!({ "config": config, "columns": cols, "rows": rows });
        let mut out = serde_json::to_vec_pretty(&doc).expect("json");
        out.push(b'\n');
        out
    }

    pub fn encode(&self, format: Format, config: &RunConfig) -> Vec<u8> {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(config),
        }
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Self, String> {
        let mut r = csv::Reader::from_reader(bytes);
        let headers: Vec<String> = r
            .headers()
            .map_err(|e| e.to_string())?
            .iter()
            .map(String::from)
            .collect();
        let mut table = Table::default();
        for rec in r.records() {
            let rec = rec.map_err(|e| e.to_string())?;
            let mut row = Row::new();
            for (h, cell) in headers.iter().zip(rec.iter()) {
                if !cell.is_empty() {
                    row.put(h, parse_cell(cell));
                }
            }
            table.push(row);
        }
        Ok(table)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, String> {
        let doc: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
        let cols = doc["columns"].as_array().ok_or("missing columns")?;
        let rows = doc["rows"].as_array().ok_or("missing rows")?;
        let mut table = Table::default();
        for obj in rows {
            let mut row = Row::new();
            for c in cols {
                let c = c.as_str().ok_or("column names must be strings")?;
                match &obj[c] {
                    serde_json::Value::Null => {}
                    serde_json::Value::Number(x) => match x.as_u64() {
                        Some(i) => row.put(c, i),
                        None => row.put(c, x.as_f64().ok_or("bad number")?),
                    },
                    serde_json::Value::String(s) => row.put(c, parse_json_text(s)),
                    other => return Err(format!("unexpected value {other} in column {c}")),
                }
            }
            table.push(row);
        }
        Ok(table)
    }

    pub fn write(&self, format: Format, config: &RunConfig, out: &mut impl Write) -> std::io::Result<()> {
        out.write_all(&self.encode(format, config))
    }
}

/// JSON has no literal for non-finite floats; they travel as strings.
fn float_json(x: f64) -> serde_json::Value {
    if x.is_finite() {
        serde_json::Value::from(x)
    } else {
        serde_json::Value::from(x.to_string())
    }
}

fn parse_json_text(s: &str) -> Value {
    match s {
        "inf" => Value::Float(f64::INFINITY),
        "-inf" => Value::Float(f64::NEG_INFINITY),
        "NaN" => Value::Float(f64::NAN),
        _ => Value::Text(s.to_string()),
    }
}

fn parse_cell(cell: &str) -> Value {
    if let Ok(i) = cell.parse::<u64>() {
        return Value::Int(i);
    }
    match cell.parse::<f64>() {
        Ok(x) if cell.contains(['e', '.']) || matches!(cell, "inf" | "-inf" | "NaN") => Value::Float(x),
        _ => Value::Text(cell.to_string()),
    }
}

/// Aggregates recomputed from the rows of a result file.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Summary {
    pub rows: usize,
    pub errors: usize,
    pub by_kind: BTreeMap<String, KindSummary>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct KindSummary {
    pub count: usize,
    pub rate_min: Option<f64>,
    pub rate_max: Option<f64>,
    pub rate_sum: f64,
    pub log_m_max: Option<f64>,
}

impl Table {
    pub fn summary(&self) -> Summary {
        let mut s = Summary {
            rows: self.rows.len(),
            ..Default::default()
        };
        for r in &self.rows {
            if r.status() != "ok" {
                s.errors += 1;
            }
            let kind = r.text("bound_kind").unwrap_or("").to_string();
            let k = s.by_kind.entry(kind).or_default();
            k.count += 1;
            if let Some(x) = r.f64("rate_nats") {
                k.rate_min = Some(k.rate_min.map_or(x, |m| m.min(x)));
                k.rate_max = Some(k.rate_max.map_or(x, |m| m.max(x)));
                k.rate_sum += x;
            }
            if let Some(x) = r.f64("log_M_nats") {
                k.log_m_max = Some(k.log_m_max.map_or(x, |m| m.max(x)));
            }
        }
        s
    }
}
