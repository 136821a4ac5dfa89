//! Ordered tabular output with provenance columns.

use std::io::Write;
use std::path::Path;

use serde_json::{Map, Value};

use crate::config::{ExperimentConfig, Format};
use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
    Empty,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(v) => format!("{v}"),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            // NaN and infinities have no JSON form; keep them readable as strings.
            Cell::Num(v) if v.is_finite() => serde_json::Number::from_f64(*v).map(Value::Number).unwrap_or(Value::Null),
            Cell::Num(v) => Value::String(format!("{v}")),
            Cell::Int(v) => Value::from(*v),
            Cell::Text(s) => Value::String(s.clone()),
            Cell::Empty => Value::Null,
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

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
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

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map(Cell::Num).unwrap_or(Cell::Empty)
    }
}

/// Rows that each start with `alpha, seed, config_hash`.
#[derive(Debug, Clone)]
pub struct Table {
    columns: Vec<String>,
    rows: Vec<Vec<Cell>>,
    seed: u64,
    hash: String,
}

impl Table {
    pub fn new(cfg: &ExperimentConfig, columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            seed: cfg.seed(),
            hash: cfg.hash(),
        }
    }

    pub fn push(&mut self, alpha: f64, cells: Vec<Cell>) {
        assert_eq!(cells.len(), self.columns.len(), "row width");
        let mut row = vec![Cell::Num(alpha), Cell::Int(self.seed), Cell::Text(self.hash.clone())];
        row.extend(cells);
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["alpha".to_string(), "seed".into(), "config_hash".into()];
        h.extend(self.columns.iter().cloned());
        h
    }

    pub fn write<W: Write>(&self, format: Format, w: W) -> Result<(), CliError> {
        match format {
            Format::Csv => {
                let mut out = csv::Writer::from_writer(w);
                out.write_record(self.header())?;
                for r in &self.rows {
                    out.write_record(r.iter().map(Cell::csv))?;
                }
                out.flush().map_err(|e| CliError::Io(e.to_string()))?;
            }
            Format::Json => {
                let header = self.header();
                let rows: Vec<Value> = self
                    .rows
                    .iter()
                    .map(|r| {
                        let mut m = Map::new();
                        for (k, c) in header.iter().zip(r) {
                            m.insert(k.clone(), c.json());
                        }
                        Value::Object(m)
                    })
                    .collect();
                let mut w = w;
                serde_json::to_writer_pretty(&mut w, &rows).map_err(|e| CliError::Io(e.to_string()))?;
                writeln!(w).map_err(|e| CliError::Io(e.to_string()))?;
            }
        }
        Ok(())
    }

    pub fn write_file(&self, format: Format, path: &Path) -> Result<(), CliError> {
        let f = std::fs::File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.write(format, std::io::BufWriter::new(f))
    }
}
