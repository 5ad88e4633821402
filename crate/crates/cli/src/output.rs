//! Human tables on standard output, CSV or JSON-lines files, and manifests.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use crate::config::{OutputFormat, RunConfig, SCHEMA_VERSION};
use crate::CliError;

pub struct Table {
    pub headers: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(headers: &[&'static str]) -> Self {
        Self { headers: headers.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn print(&self) {
        let mut width: Vec<usize> = self.headers.iter().map(|h| h.len()).collect();
        for r in &self.rows {
            for (w, c) in width.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |cells: Vec<&str>| {
            let s: Vec<String> = cells.iter().zip(&width).map(|(c, w)| format!("{c:>w$}")).collect();
            println!("{}", s.join("  ").trim_end());
        };
        line(self.headers.clone());
        for r in &self.rows {
            line(r.iter().map(String::as_str).collect());
        }
    }

    pub fn write(&self, path: &Path, format: OutputFormat) -> Result<(), CliError> {
        let out = BufWriter::new(File::create(path)?);
        match format {
            OutputFormat::Csv => {
                let mut w = csv::Writer::from_writer(out);
                let csv_err = |e: csv::Error| CliError::Runtime(e.to_string());
                w.write_record(&self.headers).map_err(csv_err)?;
                for r in &self.rows {
                    w.write_record(r).map_err(csv_err)?;
                }
                w.flush()?;
            }
            OutputFormat::Jsonl => {
                let mut out = out;
                for r in &self.rows {
                    let obj: Map<String, Value> =
                        self.headers.iter().zip(r).map(|(h, c)| (h.to_string(), cell_value(c))).collect();
                    writeln!(out, "{}", Value::Object(obj))?;
                }
                out.flush()?;
            }
        }
        Ok(())
    }
}

/// Finite numbers become JSON numbers; everything else stays a string.
fn cell_value(c: &str) -> Value {
    match c.parse::<f64>() {
        Ok(v) if v.is_finite() => serde_json::Number::from_f64(v).map(Value::Number).unwrap_or(Value::String(c.into())),
        _ => Value::String(c.into()),
    }
}

pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        v.to_string()
    }
}

/// `out.csv` with suffix `ratios` becomes `out-ratios.csv`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(e) => format!("{stem}-{suffix}.{}", e.to_string_lossy()),
        None => format!("{stem}-{suffix}"),
    };
    path.with_file_name(name)
}

#[derive(Serialize)]
struct Manifest<'a, S: Serialize> {
    schema: u32,
    tool: &'static str,
    version: &'static str,
    config: &'a RunConfig,
    outputs: Vec<String>,
    success: bool,
    summary: S,
}

/// Writes `<output>.manifest.json` next to the output, or prints the manifest
/// to standard error when there is no output file.
pub fn manifest<S: Serialize>(
    config: &RunConfig,
    outputs: &[PathBuf],
    success: bool,
    summary: S,
) -> Result<(), CliError> {
    let m = Manifest {
        schema: SCHEMA_VERSION,
        tool: "irock",
        version: env!("CARGO_PKG_VERSION"),
        config,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        success,
        summary,
    };
    let text = serde_json::to_string_pretty(&m).map_err(|e| CliError::Runtime(e.to_string()))?;
    match &config.output {
        Some(o) => {
            let mut name = o.as_os_str().to_owned();
            name.push(".manifest.json");
            std::fs::write(PathBuf::from(name), text + "\n")?;
        }
        None => eprintln!("{text}"),
    }
    Ok(())
}
