//! Result tables and their CSV / JSON renderings.

use serde::Serialize;
use serde_json::{json, Value};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(u64),
    Text(String),
    /// Sweep columns of summary rows.
    Empty,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Float(v) if v.is_finite() => format!("{v:.16e}"),
            Cell::Float(v) if v.is_nan() => "nan".into(),
            Cell::Float(v) => if *v > 0.0 { "inf" } else { "-inf" }.into(),
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    /// JSON has no non-finite numbers; those are written as the CSV strings.
    fn json(&self) -> Value {
        match self {
            Cell::Float(v) if v.is_finite() => json!(v),
            Cell::Float(_) => json!(self.csv()),
            Cell::Int(i) => json!(i),
            Cell::Text(s) => json!(s),
            Cell::Empty => Value::Null,
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
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

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metadata {
    pub task: String,
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub version: String,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    columns: Vec<String>,
    rows: Vec<Vec<Cell>>,
}

impl ResultTable {
    pub fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn with_columns(columns: Vec<String>) -> Self {
        Self { columns, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    /// Header plus one line per row, LF-terminated.
    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.iter().map(Cell::csv).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self, meta: &Metadata) -> String {
        let rows: Vec<Value> = self.rows.iter().map(|r| Value::Array(r.iter().map(Cell::json).collect())).collect();
        let doc = json!({ "metadata": meta, "columns": self.columns, "rows": rows });
        let mut s = serde_json::to_string_pretty(&doc).expect("table serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_uses_seventeen_significant_digits() {
        let mut t = ResultTable::new(&["dt", "err", "fitted_order"]);
        t.push(vec![0.1.into(), (1.0 / 3.0).into(), Cell::Empty]);
        t.push(vec![Cell::Empty, Cell::Empty, f64::INFINITY.into()]);
        assert_eq!(t.to_csv(), "dt,err,fitted_order\n1.0000000000000001e-1,3.3333333333333331e-1,\n,,inf\n");
    }

    #[test]
    fn json_mirrors_the_rows() {
        let mut t = ResultTable::new(&["n", "x"]);
        t.push(vec![4usize.into(), 0.5.into()]);
        let meta = Metadata { task: "zeno".into(), config_sha256: "00".into(), seed: Some(3), version: "0".into(), wall_time_s: 0.0 };
        let v: Value = serde_json::from_str(&t.to_json(&meta)).unwrap();
        assert_eq!(v["rows"][0][0], json!(4));
        assert_eq!(v["rows"][0][1], json!(0.5));
        assert_eq!(v["metadata"]["seed"], json!(3));
    }

    #[test]
    #[should_panic(expected = "row width")]
    fn ragged_rows_are_refused() {
        ResultTable::new(&["a", "b"]).push(vec![1.0.into()]);
    }
}
