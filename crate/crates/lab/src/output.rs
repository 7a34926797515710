use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::runner::{Cell, ResultRow, TraceRow};
use crate::OUTPUT_SCHEMA_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

/// Union of row columns in first-seen order.
pub fn header(rows: &[ResultRow]) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for row in rows {
        for (name, _) in row.columns() {
            if !names.contains(&name) {
                names.push(name);
            }
        }
    }
    names
}

fn aligned(rows: &[ResultRow]) -> (Vec<String>, Vec<Vec<Cell>>) {
    let names = header(rows);
    let table = rows
        .iter()
        .map(|row| {
            let cols = row.columns();
            names
                .iter()
                .map(|n| {
                    cols.iter()
                        .find(|(k, _)| k == n)
                        .map_or(Cell::Empty, |(_, v)| v.clone())
                })
                .collect()
        })
        .collect();
    (names, table)
}

pub fn write_rows_csv<W: Write>(out: W, rows: &[ResultRow]) -> Result<()> {
    let (names, table) = aligned(rows);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&names)?;
    for cells in table {
        w.write_record(cells.iter().map(Cell::to_field))?;
    }
    w.flush()?;
    Ok(())
}

pub fn rows_json(rows: &[ResultRow]) -> Result<Value> {
    let (names, table) = aligned(rows);
    let mut out = Vec::with_capacity(table.len());
    for cells in table {
        let mut obj = Map::new();
        for (name, cell) in names.iter().zip(cells) {
            obj.insert(name.clone(), serde_json::to_value(cell)?);
        }
        out.push(Value::Object(obj));
    }
    Ok(Value::Array(out))
}

pub fn write_rows(path: &Path, format: Format, rows: &[ResultRow]) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    match format {
        Format::Csv => write_rows_csv(&mut file, rows)?,
        Format::Json => {
            serde_json::to_writer_pretty(&mut file, &rows_json(rows)?)?;
            file.write_all(b"\n")?;
        }
    }
    file.flush()?;
    Ok(())
}

pub fn write_trace(path: &Path, traces: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "replication",
        "alpha",
        "query_index",
        "role",
        "branch",
        "value",
        "weighted_value",
        "mean_decision",
        "mean_outcome",
        "rule",
    ])?;
    for t in traces {
        w.write_record([
            t.replication.to_string(),
            t.alpha.to_string(),
            t.query_index.to_string(),
            t.role.to_string(),
            t.branch.to_string(),
            t.value.to_string(),
            t.weighted_value.to_string(),
            t.mean_decision.to_string(),
            t.mean_outcome.to_string(),
            Cell::Vector(t.rule.clone()).to_field(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `<out>.<suffix>` next to the main output.
pub fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".");
    name.push(suffix);
    PathBuf::from(name)
}

pub fn manifest(
    cfg: &ExperimentConfig,
    format: Format,
    columns: &[String],
    trace: Option<&Path>,
) -> Result<Value> {
    Ok(json!({
        "output_schema_version": OUTPUT_SCHEMA_VERSION,
        "scenario_schema_version": strategic_core::scenario_file::SCHEMA_VERSION,
        "library_version": env!("CARGO_PKG_VERSION"),
        "format": format,
        "columns": columns,
        "trace_file": trace.and_then(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned()),
        "config": serde_json::to_value(cfg)?,
    }))
}

pub fn write_manifest(path: &Path, manifest: &Value) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut file, manifest)?;
    file.write_all(b"\n")?;
    file.flush()?;
    Ok(())
}
