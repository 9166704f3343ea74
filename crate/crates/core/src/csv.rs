//! Deterministic CSV text with 17 significant digits.

use std::fmt::Write;

/// Formats a float with 17 significant digits in scientific notation.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone)]
pub struct CsvTable {
    text: String,
    columns: usize,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        let mut text = header.join(",");
        text.push('\n');
        Self {
            text,
            columns: header.len(),
        }
    }

    pub fn columns(&self) -> usize {
        self.columns
    }

    /// Appends a row; integer-valued cells can be passed via [`Cell::Int`].
    pub fn row(&mut self, cells: &[Cell]) {
        debug_assert_eq!(cells.len(), self.columns);
        for (k, c) in cells.iter().enumerate() {
            if k > 0 {
                self.text.push(',');
            }
            match c {
                Cell::Int(i) => write!(self.text, "{i}").unwrap(),
                Cell::Num(v) => self.text.push_str(&fmt_f64(*v)),
                Cell::Bool(b) => write!(self.text, "{b}").unwrap(),
            }
        }
        self.text.push('\n');
    }

    pub fn nums(&mut self, values: &[f64]) {
        let cells: Vec<Cell> = values.iter().map(|v| Cell::Num(*v)).collect();
        self.row(&cells);
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Int(i64),
    Num(f64),
    Bool(bool),
}

/// Parses a CSV produced by [`CsvTable`] into a header and numeric rows.
pub fn parse(text: &str) -> Option<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    let header = lines
        .next()?
        .split(',')
        .map(str::to_owned)
        .collect::<Vec<_>>();
    let mut rows = Vec::new();
    for l in lines.filter(|l| !l.is_empty()) {
        let r: Option<Vec<f64>> = l.split(',').map(|c| c.trim().parse::<f64>().ok()).collect();
        rows.push(r?);
    }
    Some((header, rows))
}
