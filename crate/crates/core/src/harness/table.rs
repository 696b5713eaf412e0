//! Typed result tables with a provenance header.

use std::io::Write;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::Seed;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(v) => Some(*v as f64),
            Cell::Float(v) => Some(*v),
            Cell::Text(_) => None,
        }
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

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
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

/// Float rendering for one column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FloatFormat {
    Fixed(usize),
    Sci(usize),
}

impl FloatFormat {
    fn render(self, v: f64) -> String {
        match self {
            FloatFormat::Fixed(p) => format!("{v:.p$}"),
            FloatFormat::Sci(p) => format!("{v:.p$e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Column {
    pub name: String,
    pub format: FloatFormat,
}

impl Column {
    pub fn new(name: &str, format: FloatFormat) -> Self {
        Self { name: name.to_string(), format }
    }

    pub fn fixed(name: &str, precision: usize) -> Self {
        Self::new(name, FloatFormat::Fixed(precision))
    }

    pub fn sci(name: &str, precision: usize) -> Self {
        Self::new(name, FloatFormat::Sci(precision))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub version: String,
    pub seed: Seed,
    /// First 16 hex digits of the SHA-256 of the config text.
    pub config_hash: String,
}

impl Provenance {
    pub fn new(seed: Seed, config_text: &str) -> Self {
        Self { version: env!("CARGO_PKG_VERSION").to_string(), seed, config_hash: config_hash(config_text) }
    }
}

pub fn config_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub name: String,
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Cell>>,
    pub provenance: Provenance,
}

impl ResultTable {
    pub fn new(name: &str, columns: Vec<Column>, provenance: Provenance) -> Self {
        Self { name: name.to_string(), columns, rows: Vec::new(), provenance }
    }

    pub fn push(&mut self, row: Vec<Cell>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::LengthMismatch { left: row.len(), right: self.columns.len() });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns.iter().position(|c| c.name == name).ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    /// Values of a numeric column; text cells read as NaN.
    pub fn numeric(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[i].as_f64().unwrap_or(f64::NAN)).collect())
    }

    pub fn text(&self, name: &str) -> Result<Vec<String>> {
        let i = self.column_index(name)?;
        Ok(self
            .rows
            .iter()
            .map(|r| match &r[i] {
                Cell::Text(s) => s.clone(),
                other => self.render(i, other),
            })
            .collect())
    }

    /// Keeps only rows satisfying `keep`.
    pub fn filtered(&self, keep: impl Fn(&[Cell]) -> bool) -> Self {
        Self { rows: self.rows.iter().filter(|r| keep(r)).cloned().collect(), ..self.clone() }
    }

    fn render(&self, col: usize, cell: &Cell) -> String {
        match cell {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => self.columns[col].format.render(*v),
            Cell::Text(s) => s.clone(),
        }
    }

    /// `#` provenance lines, then an RFC 4180 header and rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# bansim {}", self.provenance.version)?;
        writeln!(out, "# seed {}", self.provenance.seed.0)?;
        writeln!(out, "# config {}", self.provenance.config_hash)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.columns.iter().map(|c| c.name.as_str()))?;
        for row in &self.rows {
            w.write_record(row.iter().enumerate().map(|(i, c)| self.render(i, c)))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}
