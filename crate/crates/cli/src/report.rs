//! Output artifacts, staged in memory and written only once complete.

use std::io::Write;
use std::path::{Path, PathBuf};

use qkd_core::analysis::{FlatReport, SweepPoint};
use qkd_core::pipeline::PipelineOutput;
use serde::Serialize;

use crate::config::Scenario;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub scenario: String,
    pub seed: u64,
    pub config_digest: String,
    pub duration_s: f64,
    pub rate_bps: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub leaked_bits: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reconciliation_verified: Option<bool>,
    #[serde(flatten)]
    pub analysis: FlatReport,
}

impl Report {
    pub fn new(scenario: &Scenario, analysis: FlatReport, out: Option<&PipelineOutput>) -> Self {
        let rec = out.and_then(|o| o.reconciliation.as_ref());
        let duration_s = scenario.config.decoy.duration_s;
        Self {
            scenario: scenario.name().to_string(),
            seed: scenario.config.seed,
            config_digest: scenario.digest.clone(),
            duration_s,
            rate_bps: analysis.n_sec as f64 / duration_s,
            leaked_bits: rec.map(|r| r.leaked_bits),
            reconciliation_verified: rec.map(|r| r.verified),
            analysis,
        }
    }
}

/// Files produced by one invocation.
#[derive(Default)]
pub struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    pub fn add_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut bytes =
            serde_json::to_vec_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
        bytes.push(b'\n');
        self.add(name, bytes);
        Ok(())
    }

    pub fn add_report(&mut self, report: &Report, format: Format) -> Result<(), CliError> {
        match format {
            Format::Json => self.add_json("report.json", report),
            Format::Csv => {
                let value =
                    serde_json::to_value(report).map_err(|e| CliError::Internal(e.to_string()))?;
                let map = value.as_object().expect("report is an object");
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(map.keys())?;
                w.write_record(map.values().map(|v| match v {
                    serde_json::Value::String(s) => s.clone(),
                    serde_json::Value::Null => String::new(),
                    other => other.to_string(),
                }))?;
                self.add("report.csv", finish(w)?);
                Ok(())
            }
        }
    }

    /// Write every file under `dir`, each through a temporary name.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            let tmp = dir.join(format!(".{name}.partial"));
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
            std::fs::rename(&tmp, &path)?;
            written.push(path);
        }
        Ok(written)
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>, CliError> {
    w.into_inner()
        .map_err(|e| CliError::Internal(e.to_string()))
}

/// Selected sweep columns. `x_label` names the first column.
pub fn sweep_csv(
    points: &[SweepPoint],
    x_label: &str,
    columns: &[&str],
) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![x_label];
    header.extend_from_slice(columns);
    w.write_record(&header)?;
    for p in points {
        let mut row = vec![p.x.to_string()];
        for c in columns {
            row.push(match *c {
                "y1_lower" => p.y1_lower.to_string(),
                "b1_upper" => p.b1_upper.to_string(),
                "n_sec" => p.n_sec.to_string(),
                "rate_bps" => p.rate_bps.to_string(),
                other => unreachable!("unknown sweep column {other}"),
            });
        }
        w.write_record(&row)?;
    }
    finish(w)
}

/// Lowercase hex of the bits packed MSB-first, after a header line.
pub fn key_file(bits: &[u8], n_sec: u64, epsilon_budget: f64, digest: &str) -> Vec<u8> {
    let bytes: Vec<u8> = bits
        .chunks(8)
        .map(|c| {
            c.iter()
                .enumerate()
                .fold(0u8, |acc, (i, &b)| acc | (b << (7 - i)))
        })
        .collect();
    format!(
        "# n_sec={n_sec} epsilon_budget={epsilon_budget:e} config_digest={digest}\n{}\n",
        hex::encode(bytes)
    )
    .into_bytes()
}
