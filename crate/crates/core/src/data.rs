//! Returns files: one `return` column or `date,return` columns, with an
//! optional header row.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VolError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnRow {
    pub date: Option<String>,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReturnsFile {
    pub rows: Vec<ReturnRow>,
}

fn data_err<T>(line: usize, msg: impl std::fmt::Display) -> Result<T> {
    Err(VolError::Data(format!("line {line}: {msg}")))
}

impl ReturnsFile {
    pub fn from_values(values: &[f64]) -> Self {
        Self { rows: values.iter().map(|&value| ReturnRow { date: None, value }).collect() }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut rows = Vec::new();
        let mut width = None;
        let mut first = true;
        for record in reader.records() {
            let record = record.map_err(|e| VolError::Data(e.to_string()))?;
            let line_no = record.position().map_or(0, |p| p.line() as usize);
            if record.iter().all(str::is_empty) {
                continue;
            }
            if record.len() > 2 {
                return data_err(line_no, format!("expected 1 or 2 columns, found {}", record.len()));
            }
            let value_field = &record[record.len() - 1];
            let parsed = value_field.parse::<f64>();
            if first {
                first = false;
                if parsed.is_err() {
                    width = Some(record.len());
                    continue;
                }
            }
            match width {
                Some(w) if w != record.len() => {
                    return data_err(line_no, format!("expected {w} columns, found {}", record.len()));
                }
                None => width = Some(record.len()),
                _ => {}
            }
            let value = match parsed {
                Ok(v) if v.is_finite() => v,
                Ok(v) => return data_err(line_no, format!("non-finite return {v}")),
                Err(_) => return data_err(line_no, format!("cannot parse return {value_field:?}")),
            };
            let date = (record.len() == 2).then(|| record[0].to_string()).filter(|d| !d.is_empty());
            rows.push(ReturnRow { date, value });
        }
        if rows.is_empty() {
            return Err(VolError::Data("no returns found".into()));
        }
        Ok(Self { rows })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.value).collect()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn has_dates(&self) -> bool {
        self.rows.iter().any(|r| r.date.is_some())
    }

    /// `date,return` with a header; the date column is empty where unknown.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("date,return\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{}", r.date.as_deref().unwrap_or(""), r.value);
        }
        out
    }
}
