//! Plot-ready CSV and JSON artifacts.
//!
//! Every CSV starts with one `# ` line holding a JSON snapshot of the
//! configuration. Floats use Rust's shortest round-trip formatting, so files
//! are byte-stable for identical inputs and parse back to identical values.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use freqnoon_core::interferometer::CoincidenceTrace;
use ndarray::Array2;
use num_complex::Complex64;
use serde::Serialize;
use serde_json::Value;

use crate::error::CliError;

pub const TRACE_COLUMNS: [&str; 5] = ["delay_ps", "delay_mm", "p_si", "p_ss", "p_ii"];

fn header_line(header: &Value) -> String {
    format!("# {}\n", serde_json::to_string(header).expect("JSON values always serialize"))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// A trace as the five CSV columns.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceTable {
    pub header: Value,
    pub delay_ps: Vec<f64>,
    pub delay_mm: Vec<f64>,
    pub p_si: Vec<f64>,
    pub p_ss: Vec<f64>,
    pub p_ii: Vec<f64>,
}

impl TraceTable {
    pub fn from_trace(trace: &CoincidenceTrace, header: Value) -> Self {
        Self {
            header,
            delay_ps: trace.delays.iter().map(|d| d * 1e12).collect(),
            delay_mm: trace.delay_mm.clone(),
            p_si: trace.p_si.clone(),
            p_ss: trace.p_ss.clone(),
            p_ii: trace.p_ii.clone(),
        }
    }

    fn columns(&self) -> [&Vec<f64>; 5] {
        [&self.delay_ps, &self.delay_mm, &self.p_si, &self.p_ss, &self.p_ii]
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        TRACE_COLUMNS.iter().position(|c| *c == name).map(|k| self.columns()[k].as_slice())
    }

    pub fn to_csv(&self) -> String {
        let mut out = header_line(&self.header);
        out.push_str(&TRACE_COLUMNS.join(","));
        out.push('\n');
        let cols = self.columns();
        for j in 0..self.delay_ps.len() {
            let row: Vec<String> = cols.iter().map(|c| c[j].to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn emit_trace(trace: &CoincidenceTrace, header: Value, path: &Path) -> Result<TraceTable, CliError> {
    let table = TraceTable::from_trace(trace, header);
    write_text(path, &table.to_csv())?;
    Ok(table)
}

/// A headed numeric CSV: optional `#` JSON line, column names, rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Option<Value>,
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|k| self.columns[k].as_slice())
    }
}

pub fn parse_csv(text: &str, origin: &str) -> Result<CsvTable, CliError> {
    let mut header = None;
    let mut names: Option<Vec<String>> = None;
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if header.is_none() && names.is_none() {
                header = serde_json::from_str(rest.trim()).ok();
            }
            continue;
        }
        match &names {
            None => {
                let n: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
                columns = vec![Vec::new(); n.len()];
                names = Some(n);
            }
            Some(n) => {
                let fields: Vec<&str> = line.split(',').collect();
                if fields.len() != n.len() {
                    return Err(CliError::Config(format!(
                        "{origin}: line {}: expected {} fields, found {}",
                        lineno + 1,
                        n.len(),
                        fields.len()
                    )));
                }
                for (col, f) in columns.iter_mut().zip(fields) {
                    let v = f.trim().parse::<f64>().map_err(|e| {
                        CliError::Config(format!("{origin}: line {}: '{}' is not a number ({e})", lineno + 1, f.trim()))
                    })?;
                    col.push(v);
                }
            }
        }
    }
    let names = names.ok_or_else(|| CliError::Config(format!("{origin}: no column header")))?;
    Ok(CsvTable { header, names, columns })
}

pub fn read_trace(path: &Path) -> Result<TraceTable, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let table = parse_csv(&text, &path.display().to_string())?;
    if table.names != TRACE_COLUMNS {
        return Err(CliError::Config(format!(
            "{}: expected columns {}, found {}",
            path.display(),
            TRACE_COLUMNS.join(","),
            table.names.join(",")
        )));
    }
    let mut cols = table.columns.into_iter();
    let mut next = || cols.next().expect("five columns");
    Ok(TraceTable {
        header: table.header.unwrap_or(Value::Null),
        delay_ps: next(),
        delay_mm: next(),
        p_si: next(),
        p_ss: next(),
        p_ii: next(),
    })
}

/// Named real columns of equal length.
pub fn write_columns(path: &Path, header: &Value, names: &[&str], columns: &[&[f64]]) -> Result<(), CliError> {
    let mut out = header_line(header);
    out.push_str(&names.join(","));
    out.push('\n');
    let rows = columns.first().map_or(0, |c| c.len());
    for j in 0..rows {
        let row: Vec<String> = columns.iter().map(|c| c[j].to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_text(path, &out)
}

/// Real matrix, one CSV row per matrix row.
pub fn write_real_matrix(path: &Path, header: &Value, m: &Array2<f64>) -> Result<(), CliError> {
    let mut out = header_line(header);
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    write_text(path, &out)
}

/// `a+bj` / `a-bj`, readable by Python's `complex()`.
pub fn format_complex(z: Complex64) -> String {
    let mut s = z.re.to_string();
    if z.im.is_sign_negative() {
        let _ = write!(s, "-{}j", -z.im);
    } else {
        let _ = write!(s, "+{}j", z.im);
    }
    s
}

pub fn parse_complex(s: &str) -> Option<Complex64> {
    let body = s.trim().strip_suffix('j')?;
    // Split at the sign that starts the imaginary part, skipping exponent signs.
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&k| (bytes[k] == b'+' || bytes[k] == b'-') && !matches!(bytes[k - 1], b'e' | b'E'))?;
    let re = body[..split].parse().ok()?;
    let im = body[split..].parse().ok()?;
    Some(Complex64::new(re, im))
}

pub fn write_complex_matrix(path: &Path, header: &Value, m: &Array2<Complex64>) -> Result<(), CliError> {
    let mut out = header_line(header);
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|&z| format_complex(z)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}
