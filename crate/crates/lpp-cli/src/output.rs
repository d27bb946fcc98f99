//! Tables and their CSV / JSON serialization. Every artifact starts with the
//! provenance block: tool version, numeric-defaults tag, config hash, seed and
//! the full canonical configuration.

use crate::config::ExperimentConfig;
use serde_json::{json, Map, Value};
use std::io::Write;
use std::path::{Path, PathBuf};

/// Tag bumped whenever a default quadrature or sampling setting changes.
pub const NUMERIC_DEFAULTS: &str = "numeric-defaults-1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(v) => float17(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Num(v) if v.is_finite() => json!(v),
            Cell::Num(v) => json!(v.to_string()),
            Cell::Int(v) => json!(v),
            Cell::Text(s) => json!(s),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
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

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Text(v.to_string())
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn float17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Table {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

/// Everything a command produces.
#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    pub tables: Vec<Table>,
    /// Extra JSON documents (name, value), always written as JSON.
    pub documents: Vec<(String, Value)>,
}

pub struct Provenance<'a> {
    pub config: &'a ExperimentConfig,
    pub seed: Option<u64>,
}

impl Provenance<'_> {
    fn header_lines(&self) -> Vec<String> {
        let mut lines = vec![
            format!("lpp {}", env!("CARGO_PKG_VERSION")),
            format!("defaults = {NUMERIC_DEFAULTS}"),
            format!("config_hash = {}", self.config.hash()),
        ];
        if let Some(s) = self.seed {
            lines.push(format!("seed = {s}"));
        }
        lines.extend(self.config.entries().map(|(k, v)| format!("config {k} = {v}")));
        lines
    }

    fn json_header(&self) -> Map<String, Value> {
        let mut m = Map::new();
        m.insert("tool".into(), json!(format!("lpp {}", env!("CARGO_PKG_VERSION"))));
        m.insert("defaults".into(), json!(NUMERIC_DEFAULTS));
        m.insert("config_hash".into(), json!(self.config.hash()));
        if let Some(s) = self.seed {
            m.insert("seed".into(), json!(s));
        }
        let cfg: Map<String, Value> = self.config.entries().map(|(k, v)| (k.clone(), json!(v))).collect();
        m.insert("config".into(), Value::Object(cfg));
        m
    }
}

pub fn render_csv(table: &Table, prov: &Provenance) -> anyhow::Result<String> {
    let mut out = String::new();
    for line in prov.header_lines() {
        out.push_str("# ");
        out.push_str(&line);
        out.push('\n');
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&table.columns)?;
    for row in &table.rows {
        w.write_record(row.iter().map(Cell::csv))?;
    }
    out.push_str(std::str::from_utf8(&w.into_inner()?)?);
    Ok(out)
}

pub fn table_json(table: &Table, prov: &Provenance) -> Value {
    let mut m = prov.json_header();
    m.insert("table".into(), json!(table.name));
    m.insert("columns".into(), json!(table.columns));
    let rows: Vec<Value> = table
        .rows
        .iter()
        .map(|r| Value::Array(r.iter().map(Cell::json).collect()))
        .collect();
    m.insert("rows".into(), Value::Array(rows));
    Value::Object(m)
}

pub fn document_json(name: &str, doc: &Value, prov: &Provenance) -> Value {
    let mut m = prov.json_header();
    m.insert("document".into(), json!(name));
    m.insert("data".into(), doc.clone());
    Value::Object(m)
}

/// Writes every artifact under `dir`, or prints them to stdout when `dir` is `None`.
pub fn emit(artifacts: &Artifacts, format: Format, dir: Option<&Path>, prov: &Provenance) -> anyhow::Result<Vec<PathBuf>> {
    let mut rendered: Vec<(String, String)> = Vec::new();
    for t in &artifacts.tables {
        match format {
            Format::Csv => rendered.push((format!("{}.csv", t.name), render_csv(t, prov)?)),
            Format::Json => rendered.push((
                format!("{}.json", t.name),
                serde_json::to_string_pretty(&table_json(t, prov))? + "\n",
            )),
        }
    }
    for (name, doc) in &artifacts.documents {
        rendered.push((
            format!("{name}.json"),
            serde_json::to_string_pretty(&document_json(name, doc, prov))? + "\n",
        ));
    }
    let mut written = Vec::new();
    match dir {
        Some(d) => {
            std::fs::create_dir_all(d)?;
            for (name, body) in rendered {
                let path = d.join(name);
                std::fs::write(&path, body)?;
                written.push(path);
            }
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            for (_, body) in rendered {
                lock.write_all(body.as_bytes())?;
            }
        }
    }
    Ok(written)
}
