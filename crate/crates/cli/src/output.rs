//! JSON summaries and CSV series.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use lambda_switch::model::SwitchParams;
use serde_json::{Map, Value};

use crate::error::CliError;

/// Version of the CSV column layouts and of the JSON summary.
pub const SCHEMA_VERSION: u32 = 1;

/// A table written as `<prefix>_<name>.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
    Empty,
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Num)
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(v) => format!("{v:e}"),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

impl Series {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Values of column `name` as numbers.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(
            self.rows
                .iter()
                .map(|r| match &r[k] {
                    Cell::Num(v) => *v,
                    Cell::Int(v) => *v as f64,
                    _ => f64::NAN,
                })
                .collect(),
        )
    }
}

pub fn path_for(prefix: &str, suffix: &str) -> PathBuf {
    PathBuf::from(format!("{prefix}{suffix}"))
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    Ok(BufWriter::new(
        File::create(path).map_err(|e| io_err(path, e))?,
    ))
}

/// Writes a series with the schema comment line ahead of the header.
pub fn write_csv(path: &Path, series: &Series) -> Result<(), CliError> {
    let mut out = create(path)?;
    writeln!(out, "# schema={SCHEMA_VERSION}").map_err(|e| io_err(path, e))?;
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(&series.columns)
            .map_err(|e| io_err(path, e))?;
        for row in &series.rows {
            w.write_record(row.iter().map(Cell::render))
                .map_err(|e| io_err(path, e))?;
        }
        w.flush().map_err(|e| io_err(path, e))?;
    }
    out.flush().map_err(|e| io_err(path, e))
}

pub fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| io_err(path, e))?;
    writeln!(out).map_err(|e| io_err(path, e))?;
    out.flush().map_err(|e| io_err(path, e))
}

/// Finite numbers as JSON numbers, everything else as `null`.
pub fn num(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
}

pub fn opt_num(v: Option<f64>) -> Value {
    v.map_or(Value::Null, num)
}

/// Every model parameter, for embedding in summaries.
pub fn params_json(p: &SwitchParams) -> Value {
    let mut m = Map::new();
    let fields: [(&str, f64); 18] = [
        ("g_a", p.g_a),
        ("g_b", p.g_b),
        ("kappa_a", p.kappa_a),
        ("kappa_b", p.kappa_b),
        ("kappa_a_in_frac", p.kappa_a_in_frac),
        ("kappa_a_out_frac", p.kappa_a_out_frac),
        ("kappa_b_in_frac", p.kappa_b_in_frac),
        ("kappa_b_out_frac", p.kappa_b_out_frac),
        ("gamma_a", p.gamma_a),
        ("gamma_b", p.gamma_b),
        ("theta_a", p.theta_a),
        ("theta_b", p.theta_b),
        ("delta_cap", p.delta_cap),
        ("delta_small", p.delta_small),
        ("eps_a", p.eps_a),
        ("eps_b", p.eps_b),
        ("eps_c", p.eps_c),
        ("omega_cap", p.omega_cap),
    ];
    for (k, v) in fields {
        m.insert(k.into(), num(v));
    }
    m.insert("n_a".into(), p.n_a.into());
    m.insert("n_b".into(), p.n_b.into());
    Value::Object(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_starts_with_the_schema_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        let mut s = Series::new("x", &["t_gamma_b", "pop_G", "note"]);
        s.push(vec![0.5.into(), Cell::Empty, Cell::Text("a,b".into())]);
        write_csv(&path, &s).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "# schema=1\nt_gamma_b,pop_G,note\n5e-1,,\"a,b\"\n");
    }

    #[test]
    fn float_rendering_round_trips() {
        for v in [0.1, 1.0 / 3.0, 2390.97, -1e-300, 12345678.9] {
            let text = Cell::Num(v).render();
            assert_eq!(text.parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn params_are_complete() {
        let v = params_json(&SwitchParams::table1());
        assert_eq!(v.as_object().unwrap().len(), 20);
        assert_eq!(v["g_b"], 10.0);
    }
}
