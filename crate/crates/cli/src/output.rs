use std::fs;
use std::path::Path;

use serde_json::{Map, Number, Value};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
    Both,
}

/// One rendered cell. Floats are rendered once and the same string is used
/// in both output formats.
#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Text(String),
    Int(u64),
    Float(f64),
}

/// 17 significant digits with a signed exponent (`1.2500000000000000e+0`);
/// parses back to the identical `f64`.
pub fn render_float(x: f64) -> String {
    if x.is_finite() {
        let s = format!("{x:.16e}");
        match s.split_once('e') {
            Some((mantissa, exp)) if !exp.starts_with('-') => format!("{mantissa}e+{exp}"),
            _ => s,
        }
    } else {
        // CSV keeps the token, JSON maps it to null
        format!("{x}")
    }
}

impl Field {
    fn csv(&self) -> String {
        match self {
            Field::Text(s) => s.clone(),
            Field::Int(i) => i.to_string(),
            Field::Float(x) => render_float(*x),
        }
    }

    fn json(&self) -> Value {
        match self {
            Field::Text(s) => Value::String(s.clone()),
            Field::Int(i) => Value::Number((*i).into()),
            Field::Float(x) if x.is_finite() => {
                let n: Number = render_float(*x).parse().expect("rendered float is a JSON number");
                Value::Number(n)
            }
            Field::Float(_) => Value::Null,
        }
    }
}

impl From<&str> for Field {
    fn from(s: &str) -> Self {
        Field::Text(s.to_string())
    }
}

impl From<usize> for Field {
    fn from(i: usize) -> Self {
        Field::Int(i as u64)
    }
}

impl From<f64> for Field {
    fn from(x: f64) -> Self {
        Field::Float(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Field>>,
}

impl Table {
    pub fn new(columns: &[&'static str]) -> Self {
        Self {
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Field>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| CliError::Io(e.to_string());
        w.write_record(&self.columns).map_err(io)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Field::csv)).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                let obj: Map<String, Value> = self
                    .columns
                    .iter()
                    .zip(row)
                    .map(|(c, f)| (c.to_string(), f.json()))
                    .collect();
                Value::Object(obj)
            })
            .collect();
        let mut s = serde_json::to_string_pretty(&Value::Array(rows)).expect("json values serialize");
        s.push('\n');
        s
    }

    /// Write `<stem>.csv` and/or `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str, format: Format) -> Result<(), CliError> {
        if matches!(format, Format::Csv | Format::Both) {
            write_file(&dir.join(format!("{stem}.csv")), &self.to_csv()?)?;
        }
        if matches!(format, Format::Json | Format::Both) {
            write_file(&dir.join(format!("{stem}.json")), &self.to_json())?;
        }
        Ok(())
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0, f64::MIN_POSITIVE] {
            let s = render_float(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
    }

    #[test]
    fn csv_and_json_agree() {
        for x in [1.0 / 3.0, 1234.5] {
            let mut t = Table::new(&["name", "k", "value"]);
            t.push(vec!["a".into(), 3usize.into(), x.into()]);
            let csv = t.to_csv().unwrap();
            let json = t.to_json();
            let rendered = render_float(x);
            assert_eq!(csv, format!("name,k,value\na,3,{rendered}\n"));
            assert!(json.contains(&format!("\"value\": {rendered}")), "{json}");
        }
    }

    #[test]
    fn non_finite_is_null_in_json() {
        let mut t = Table::new(&["x"]);
        t.push(vec![f64::NAN.into()]);
        assert!(t.to_json().contains("null"));
        assert_eq!(t.to_csv().unwrap(), "x\nNaN\n");
    }
}
