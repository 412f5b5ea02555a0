//! CSV output with comment-line metadata, and a reader for numeric tables.
//!
//! Layout:
//!
//! ```text
//! # B [G], I_PL [counts/us]
//! # meta: config_sha256=…, seed=0
//! 4.8000000000000000e2,4.9999999999999993e1
//! ```
//!
//! Values carry 17 significant digits, so reading back is bit-exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::sweep::SweepResult;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IoError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}, line {line}: {message}")]
    Parse { path: String, line: usize, message: String },
}

fn io_err(path: &Path, e: impl ToString) -> IoError {
    IoError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn meta_line(meta: &BTreeMap<String, String>) -> String {
    let items: Vec<String> = meta.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("# meta: {}\n", items.join(", "))
}

/// Long-format table: one header comment, one meta comment, numeric rows.
pub fn table_to_string(labels: &[String], rows: &[Vec<f64>], meta: &BTreeMap<String, String>) -> String {
    let mut out = format!("# {}\n", labels.join(", "));
    out.push_str(&meta_line(meta));
    for row in rows {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v:.16e}");
        }
        out.push('\n');
    }
    out
}

pub fn sweep_to_string(result: &SweepResult) -> String {
    let mut labels = vec![result.x_label.clone()];
    labels.extend(result.series.iter().map(|s| s.label.clone()));
    let rows: Vec<Vec<f64>> = (0..result.len())
        .map(|i| {
            std::iter::once(result.x[i])
                .chain(result.series.iter().map(|s| s.values[i]))
                .collect()
        })
        .collect();
    table_to_string(&labels, &rows, &result.meta)
}

pub fn write_text(text: &str, path: &Path) -> Result<(), IoError> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn write_csv(result: &SweepResult, path: &Path) -> Result<(), IoError> {
    write_text(&sweep_to_string(result), path)
}

/// Parsed numeric table.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvData {
    pub labels: Vec<String>,
    pub meta: BTreeMap<String, String>,
    pub columns: Vec<Vec<f64>>,
}

pub fn parse_csv(text: &str, origin: &str) -> Result<CsvData, IoError> {
    let mut labels = Vec::new();
    let mut meta = BTreeMap::new();
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        let body = line.trim_start_matches('#').trim();
        if let Some(m) = body.strip_prefix("meta:") {
            for item in m.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                if let Some((k, v)) = item.split_once('=') {
                    meta.insert(k.trim().to_string(), v.trim().to_string());
                }
            }
        } else if labels.is_empty() {
            labels = body.split(", ").map(|s| s.trim().to_string()).collect();
        }
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(text.as_bytes());
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| IoError::Parse {
            path: origin.to_string(),
            line: e.position().map_or(row + 1, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(row + 1, |p| p.line() as usize);
        if columns.is_empty() {
            columns = vec![Vec::new(); record.len()];
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| IoError::Parse {
                path: origin.to_string(),
                line,
                message: format!("`{field}` is not a number"),
            })?;
            columns[j].push(v);
        }
    }
    if columns.is_empty() {
        columns = vec![Vec::new(); labels.len()];
    }
    Ok(CsvData { labels, meta, columns })
}

pub fn read_csv(path: &Path) -> Result<CsvData, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_csv(&text, &path.display().to_string())
}
