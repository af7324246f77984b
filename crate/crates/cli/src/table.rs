//! Rectangular result tables and their CSV / JSON serialization.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};
use thiserror::Error;

/// Version stamped into every output's metadata.
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum EmitError {
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv encoding failed for {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("table is not rectangular: row {row} has {found} cells, expected {expected}")]
    Ragged { row: usize, found: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Bool(bool),
    Text(String),
}

impl Cell {
    /// Text form used in CSV: floats carry 17 significant digits.
    pub fn render(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(x) if x.is_finite() => format!("{x:.16e}"),
            Cell::Float(x) => format!("{x}"),
            Cell::Bool(b) => b.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }

    fn to_json(&self) -> Value {
        match self {
            Cell::Int(i) => json!(i),
            Cell::Float(x) => json!(x),
            Cell::Bool(b) => json!(b),
            Cell::Text(s) => json!(s),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<bool> for Cell {
    fn from(b: bool) -> Self {
        Cell::Bool(b)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    /// Effective configuration and provenance, in insertion order.
    pub meta: Vec<(String, String)>,
    pub defaults_applied: Vec<String>,
    /// Excluded from the data so that repeated runs compare byte-equal.
    pub wall_time_seconds: Option<f64>,
}

impl ResultTable {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            meta: Vec::new(),
            defaults_applied: Vec::new(),
            wall_time_seconds: None,
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<&Cell>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| &r[i]).collect())
    }

    pub fn check_rectangular(&self) -> Result<(), EmitError> {
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != self.columns.len() {
                return Err(EmitError::Ragged { row: i, found: row.len(), expected: self.columns.len() });
            }
        }
        Ok(())
    }

    fn meta_json(&self) -> Value {
        let mut meta = Map::new();
        meta.insert("artifact_version".into(), json!(ARTIFACT_VERSION));
        let config: Map<String, Value> = self.meta.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
        meta.insert("config".into(), Value::Object(config));
        meta.insert("defaults_applied".into(), json!(self.defaults_applied));
        Value::Object(meta)
    }

    /// RFC-4180 CSV with a header row.
    pub fn to_csv(&self) -> Result<Vec<u8>, EmitError> {
        self.check_rectangular()?;
        let path = PathBuf::from("<memory>");
        let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
        writer.write_record(&self.columns).map_err(|source| EmitError::Csv { path: path.clone(), source })?;
        for row in &self.rows {
            writer
                .write_record(row.iter().map(Cell::render))
                .map_err(|source| EmitError::Csv { path: path.clone(), source })?;
        }
        writer.into_inner().map_err(|e| EmitError::Io { path, source: e.into_error() })
    }

    /// `{meta, columns, sidecar}` where `sidecar` holds the wall time.
    pub fn to_json(&self) -> Result<Value, EmitError> {
        self.check_rectangular()?;
        let mut columns = Map::new();
        for (i, name) in self.columns.iter().enumerate() {
            columns.insert(name.clone(), Value::Array(self.rows.iter().map(|r| r[i].to_json()).collect()));
        }
        let mut root = Map::new();
        root.insert("meta".into(), self.meta_json());
        root.insert("columns".into(), Value::Object(columns));
        root.insert("sidecar".into(), json!({ "wall_time_seconds": self.wall_time_seconds }));
        Ok(Value::Object(root))
    }

    /// Metadata written next to a CSV file.
    pub fn sidecar_json(&self) -> Value {
        json!({
            "meta": self.meta_json(),
            "column_order": self.columns,
            "sidecar": { "wall_time_seconds": self.wall_time_seconds },
        })
    }
}

/// Path of the metadata file accompanying a CSV output.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// Writes `table` to `path`, or to stdout when `path` is `None`. CSV output
/// gets a `<path>.meta.json` sidecar holding the configuration echo.
pub fn emit(table: &ResultTable, path: Option<&Path>, format: Format) -> Result<(), EmitError> {
    let bytes = match format {
        Format::Csv => table.to_csv()?,
        Format::Json => {
            let mut b = serde_json::to_vec_pretty(&table.to_json()?).expect("json values serialize");
            b.push(b'\n');
            b
        }
    };
    match path {
        None => {
            let stdout = PathBuf::from("<stdout>");
            std::io::stdout().write_all(&bytes).map_err(|source| EmitError::Io { path: stdout, source })
        }
        Some(p) => {
            std::fs::write(p, &bytes).map_err(|source| EmitError::Io { path: p.to_path_buf(), source })?;
            if format == Format::Csv {
                let side = sidecar_path(p);
                let mut b = serde_json::to_vec_pretty(&table.sidecar_json()).expect("json values serialize");
                b.push(b'\n');
                std::fs::write(&side, b).map_err(|source| EmitError::Io { path: side, source })?;
            }
            Ok(())
        }
    }
}
