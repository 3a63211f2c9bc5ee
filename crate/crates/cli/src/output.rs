//! Result bundles: numeric tables plus `manifest.json` and `summary.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::ScenarioConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    F(f64),
    I(i64),
    B(bool),
    S(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::F(v)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::I(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::I(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::B(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::S(v.to_string())
    }
}

impl Cell {
    /// Floats carry 17 significant digits.
    fn text(&self) -> String {
        match self {
            Cell::F(v) if v.is_nan() => "NaN".into(),
            Cell::F(v) => format!("{v:.16e}"),
            Cell::I(v) => v.to_string(),
            Cell::B(v) => v.to_string(),
            Cell::S(v) => v.clone(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::F(v) => serde_json::Number::from_f64(*v).map_or(Value::Null, Value::Number),
            Cell::I(v) => json!(v),
            Cell::B(v) => json!(v),
            Cell::S(v) => json!(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: &'static str,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &'static str, columns: &[&'static str]) -> Self {
        Self {
            name,
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn write(&self, dir: &Path, format: Format) -> Result<PathBuf, String> {
        match format {
            Format::Csv => {
                let path = dir.join(format!("{}.csv", self.name));
                let mut w = csv::Writer::from_path(&path).map_err(|e| e.to_string())?;
                w.write_record(&self.columns).map_err(|e| e.to_string())?;
                for row in &self.rows {
                    w.write_record(row.iter().map(Cell::text))
                        .map_err(|e| e.to_string())?;
                }
                w.flush().map_err(|e| e.to_string())?;
                Ok(path)
            }
            Format::Json => {
                let path = dir.join(format!("{}.json", self.name));
                let rows: Vec<Value> = self
                    .rows
                    .iter()
                    .map(|r| {
                        let m: Map<String, Value> = self
                            .columns
                            .iter()
                            .zip(r)
                            .map(|(c, v)| (c.to_string(), v.json()))
                            .collect();
                        Value::Object(m)
                    })
                    .collect();
                write_json(&path, &rows)?;
                Ok(path)
            }
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), String> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
    text.push('\n');
    fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

/// Outcome of one command.
#[derive(Debug, Clone, Default)]
pub struct ResultBundle {
    pub tables: Vec<Table>,
    pub scalars: Vec<(String, f64)>,
    pub checks: Vec<(String, bool)>,
    pub events: Vec<String>,
}

impl ResultBundle {
    pub fn scalar(&mut self, name: impl Into<String>, v: f64) {
        self.scalars.push((name.into(), v));
    }

    pub fn check(&mut self, name: impl Into<String>, ok: bool) {
        self.checks.push((name.into(), ok));
    }

    pub fn all_checks_pass(&self) -> bool {
        self.checks.iter().all(|(_, ok)| *ok)
    }

    pub fn write(
        &self,
        dir: &Path,
        format: Format,
        command: &str,
        seed: Option<u64>,
        config: Option<&ScenarioConfig>,
    ) -> Result<Vec<PathBuf>, String> {
        fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        let mut written = Vec::new();
        for t in &self.tables {
            written.push(t.write(dir, format)?);
        }
        let manifest = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": seed,
            "config": config,
            "tables": self.tables.iter().map(|t| json!({"name": t.name, "columns": t.columns})).collect::<Vec<_>>(),
        });
        let path = dir.join("manifest.json");
        write_json(&path, &manifest)?;
        written.push(path);
        let scalars: Map<String, Value> = self
            .scalars
            .iter()
            .map(|(k, v)| (k.clone(), Cell::F(*v).json()))
            .collect();
        let checks: Map<String, Value> = self
            .checks
            .iter()
            .map(|(k, v)| (k.clone(), json!(v)))
            .collect();
        let path = dir.join("summary.json");
        write_json(
            &path,
            &json!({"scalars": scalars, "checks": checks, "events": self.events}),
        )?;
        written.push(path);
        Ok(written)
    }

    pub fn print_summary(&self) {
        for (k, v) in &self.scalars {
            println!("{k:<32} {v:.6e}");
        }
        for (k, ok) in &self.checks {
            println!("{} {k}", if *ok { "PASS" } else { "FAIL" });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_keep_seventeen_digits() {
        assert_eq!(Cell::F(0.1).text(), "1.0000000000000001e-1");
        assert_eq!(Cell::F(f64::NAN).text(), "NaN");
        assert_eq!(Cell::F(f64::NAN).json(), Value::Null);
        let x = 1.0 / 3.0;
        assert_eq!(Cell::F(x).text().parse::<f64>().unwrap(), x);
    }
}
