//! Header block plus one table per run, as CSV or JSON.
//!
//! CSV: `#`-prefixed header lines (tool, version, config hash, seed, optional
//! timestamp, then the echoed config), a column row, and the data rows.
//! JSON: the same header as fields, `columns`, and `rows` as arrays.

use std::io::Write;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{Format, RunConfig};
use crate::error::{CliError, CliResult};

pub const TOOL: &str = "regntk";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
    Empty,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(v) => format_num(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> serde_json::Value {
        match self {
            Cell::Num(v) if v.is_finite() => serde_json::Value::from(*v),
            Cell::Num(v) => serde_json::Value::from(format_num(*v)),
            Cell::Int(v) => serde_json::Value::from(*v),
            Cell::Text(s) => serde_json::Value::from(s.as_str()),
            Cell::Empty => serde_json::Value::Null,
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Num)
    }
}

fn format_num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v:e}")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub config_toml: String,
    pub config_hash: String,
    pub seed: u64,
    /// Seconds since the Unix epoch; `None` under `--deterministic`.
    pub generated: Option<u64>,
}

impl Header {
    pub fn new(config: &RunConfig, deterministic: bool) -> Self {
        let config_toml = config.to_toml();
        let config_hash = hex::encode(Sha256::digest(config_toml.as_bytes()));
        let generated = (!deterministic).then(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        });
        Self {
            config_toml,
            config_hash,
            seed: config.seed,
            generated,
        }
    }
}

pub fn write(out: &mut dyn Write, format: Format, header: &Header, table: &Table) -> CliResult<()> {
    match format {
        Format::Csv => write_csv(out, header, table),
        Format::Json => write_json(out, header, table),
    }
}

fn write_csv(out: &mut dyn Write, header: &Header, table: &Table) -> CliResult<()> {
    writeln!(out, "# tool: {TOOL}")?;
    writeln!(out, "# version: {VERSION}")?;
    writeln!(out, "# config_sha256: {}", header.config_hash)?;
    writeln!(out, "# seed: {}", header.seed)?;
    if let Some(t) = header.generated {
        writeln!(out, "# generated_unix: {t}")?;
    }
    writeln!(out, "# config:")?;
    for line in header.config_toml.lines() {
        writeln!(out, "#   {line}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&table.columns)
        .map_err(|e| CliError::Output(e.to_string()))?;
    for row in &table.rows {
        w.write_record(row.iter().map(Cell::csv))
            .map_err(|e| CliError::Output(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn write_json(out: &mut dyn Write, header: &Header, table: &Table) -> CliResult<()> {
    let rows: Vec<Vec<serde_json::Value>> = table
        .rows
        .iter()
        .map(|r| r.iter().map(Cell::json).collect())
        .collect();
    let mut doc = serde_json::Map::new();
    doc.insert("tool".into(), TOOL.into());
    doc.insert("version".into(), VERSION.into());
    doc.insert("config_sha256".into(), header.config_hash.clone().into());
    doc.insert("seed".into(), header.seed.into());
    if let Some(t) = header.generated {
        doc.insert("generated_unix".into(), t.into());
    }
    doc.insert("config".into(), header.config_toml.clone().into());
    doc.insert(
        "columns".into(),
        serde_json::to_value(&table.columns).unwrap(),
    );
    doc.insert("rows".into(), serde_json::to_value(rows).unwrap());
    serde_json::to_writer_pretty(&mut *out, &serde_json::Value::Object(doc))
        .map_err(|e| CliError::Output(e.to_string()))?;
    writeln!(out)?;
    Ok(())
}

/// Recovers the echoed config from a CSV output file.
pub fn echoed_config(csv_text: &str) -> Option<String> {
    let mut lines = csv_text.lines().skip_while(|l| *l != "# config:").skip(1);
    let mut out = String::new();
    for line in lines.by_ref() {
        match line.strip_prefix("#   ") {
            Some(l) => {
                out.push_str(l);
                out.push('\n');
            }
            None if line == "#" => out.push('\n'),
            None => break,
        }
    }
    (!out.is_empty()).then_some(out)
}
