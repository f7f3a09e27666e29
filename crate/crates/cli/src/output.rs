//! Rendering of reports as JSON or flattened CSV.

use serde_json::{Map, Value};

use crate::config::Format;
use crate::error::JobError;
use crate::jobs::Report;

pub const CSV_HEADER: [&str; 3] = ["key", "index", "value"];

pub fn report_json(report: &Report) -> Value {
    serde_json::to_value(report).expect("reports serialize to JSON")
}

/// The part of a report that goes into CSV: everything except the echoed
/// configuration.
fn csv_view(report: &Value) -> Value {
    match report {
        Value::Object(m) => Value::Object(m.iter().filter(|(k, _)| *k != "config_echo").map(|(k, v)| (k.clone(), v.clone())).collect::<Map<_, _>>()),
        other => other.clone(),
    }
}

fn is_scalar(v: &Value) -> bool {
    !matches!(v, Value::Array(_) | Value::Object(_))
}

fn scalar_text(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

/// Flatten to `(key, index, value)` rows. Arrays of scalars produce one row
/// per element with its index; nested containers extend the key path.
pub fn flatten(value: &Value) -> Vec<[String; 3]> {
    let mut rows = Vec::new();
    walk(value, "", &mut rows);
    rows
}

fn walk(value: &Value, path: &str, rows: &mut Vec<[String; 3]>) {
    match value {
        Value::Object(m) => {
            for (k, v) in m {
                walk(v, &join(path, k), rows);
            }
        }
        Value::Array(items) if items.iter().all(is_scalar) => {
            for (i, v) in items.iter().enumerate() {
                rows.push([path.to_string(), i.to_string(), scalar_text(v)]);
            }
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                walk(v, &format!("{path}[{i}]"), rows);
            }
        }
        scalar => rows.push([path.to_string(), String::new(), scalar_text(scalar)]),
    }
}

pub fn to_csv(value: &Value) -> Result<String, JobError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    let csv_err = |e: csv::Error| JobError::output(e.to_string(), "");
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for row in flatten(value) {
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| JobError::output(e.to_string(), ""))?;
    Ok(String::from_utf8(bytes).expect("CSV of UTF-8 input is UTF-8"))
}

/// Render a single report.
pub fn render_report(report: &Report, format: Format) -> Result<String, JobError> {
    let v = report_json(report);
    match format {
        Format::Json => Ok(pretty(&v)),
        Format::Csv => to_csv(&csv_view(&v)),
    }
}

/// Render a list of sweep entries.
pub fn render_list(entries: &[Value], format: Format) -> Result<String, JobError> {
    let list = Value::Array(entries.iter().map(csv_view_if(format)).collect());
    match format {
        Format::Json => Ok(pretty(&list)),
        Format::Csv => to_csv(&list),
    }
}

fn csv_view_if(format: Format) -> impl Fn(&Value) -> Value {
    move |v| match format {
        Format::Json => v.clone(),
        Format::Csv => csv_view(v),
    }
}

pub fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values serialize");
    s.push('\n');
    s
}

/// Write to `path`, or stdout when absent.
pub fn emit(text: &str, path: Option<&str>) -> Result<(), JobError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| JobError::output(e.to_string(), p)),
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| JobError::output(e.to_string(), "<stdout>"))
        }
    }
}
