//! Result emission: one JSON record and one flat CSV table per run.
//!
//! The CSV is fully reproducible byte for byte given (config, seed): it
//! carries the resolved configuration in `#` comments, a header row, and
//! data rows; nothing time- or machine-dependent. Wall-clock timings live
//! only in the JSON record.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

use crate::config::ExperimentConfig;

/// One aggregated data point of an experiment.
#[derive(Debug, Clone, Serialize)]
pub struct DataPoint {
    /// Sweep coordinate (SNR in dB, distance in meters, user index, ...).
    pub x: f64,
    /// Measured value.
    pub y: f64,
    /// Standard error of `y` over the trials behind it (zero when exact).
    pub stderr: f64,
    /// Series label (model or algorithm name).
    pub series: String,
}

/// Machine-readable run record.
#[derive(Debug, Clone, Serialize)]
pub struct ResultRecord {
    pub kind: String,
    pub library_version: String,
    /// Resolved configuration; reloading it reproduces the run bit-exactly.
    pub config: ExperimentConfig,
    pub results: Vec<DataPoint>,
    /// Experiment-specific extras (definitions, diagnostics, fractions).
    pub details: Value,
    pub timings: Value,
}

impl ResultRecord {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self {
            kind: config.kind.as_str().to_string(),
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            results: Vec::new(),
            details: Value::Null,
            timings: Value::Null,
        }
    }
}

/// A CSV table: column names plus preformatted rows.
#[derive(Debug, Clone)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self::with_columns(columns.iter().map(|c| c.to_string()).collect())
    }

    pub fn with_columns(columns: Vec<String>) -> Self {
        Self {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

/// Shortest round-trip formatting keeps output deterministic and exact.
pub fn fmt_f64(value: f64) -> String {
    format!("{value}")
}

fn render_csv(config: &ExperimentConfig, table: &Table) -> String {
    let mut out = String::new();
    out.push_str(&format!("# kind={}\n", config.kind.as_str()));
    out.push_str(&format!("# seed={}\n", config.seed));
    out.push_str(&format!("# library_version={}\n", env!("CARGO_PKG_VERSION")));
    let config_json = serde_json::to_string(config).expect("config serializes");
    out.push_str(&format!("# config={config_json}\n"));
    out.push_str(&table.columns.join(","));
    out.push('\n');
    for row in &table.rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// File paths produced by a run.
#[derive(Debug, Clone)]
pub struct OutputPaths {
    pub record: PathBuf,
    pub table: PathBuf,
}

/// Writes the record and table atomically: both land under temporary names
/// first and are renamed on success, so failures leave no partial outputs.
pub fn write_outputs(
    out_dir: &Path,
    record: &ResultRecord,
    table: &Table,
) -> Result<OutputPaths> {
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    let base = record.kind.clone();
    let record_path = out_dir.join(format!("{base}.json"));
    let table_path = out_dir.join(format!("{base}.csv"));
    let record_tmp = out_dir.join(format!(".{base}.json.tmp"));
    let table_tmp = out_dir.join(format!(".{base}.csv.tmp"));

    let write_all = || -> Result<()> {
        let mut f = fs::File::create(&record_tmp)?;
        serde_json::to_writer_pretty(&mut f, record)?;
        f.write_all(b"\n")?;
        f.sync_all()?;
        let mut f = fs::File::create(&table_tmp)?;
        f.write_all(render_csv(&record.config, table).as_bytes())?;
        f.sync_all()?;
        fs::rename(&record_tmp, &record_path)?;
        fs::rename(&table_tmp, &table_path)?;
        Ok(())
    };
    if let Err(e) = write_all() {
        let _ = fs::remove_file(&record_tmp);
        let _ = fs::remove_file(&table_tmp);
        return Err(e).with_context(|| format!("writing outputs to {}", out_dir.display()));
    }
    Ok(OutputPaths {
        record: record_path,
        table: table_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_is_deterministic_and_commented() {
        let config = ExperimentConfig::default();
        let mut table = Table::new(&["x", "y"]);
        table.push(vec![fmt_f64(1.0), fmt_f64(0.125)]);
        table.push(vec![fmt_f64(2.0), fmt_f64(1.0 / 3.0)]);
        let a = render_csv(&config, &table);
        let b = render_csv(&config, &table);
        assert_eq!(a, b);
        assert!(a.starts_with("# kind=single-run\n# seed=1\n"));
        assert!(a.contains("# config={"));
        assert!(a.contains("x,y\n1,0.125\n"));
        // Shortest round-trip float text parses back exactly.
        assert_eq!("0.3333333333333333".parse::<f64>().unwrap(), 1.0 / 3.0);
    }
}
