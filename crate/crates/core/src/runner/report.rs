use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::experiment::{RunRecord, Row};
use crate::error::{Error, Result};
use crate::metrics::UQI_NOTE;

/// CSV header, fixed.
pub const CSV_COLUMNS: [&str; 15] = [
    "method",
    "seed",
    "acc_retain",
    "acc_test",
    "f1_test",
    "acc_forget",
    "uqi",
    "agree_test",
    "mia",
    "kl_retain",
    "js_retain",
    "kl_test",
    "js_test",
    "fidelity_mean",
    "wall_s",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// Per-seed rows followed by mean rows. Floats use the shortest decimal
/// form that round-trips; an absent MIA is an empty cell.
pub fn to_csv(record: &RunRecord) -> String {
    let mut out = CSV_COLUMNS.join(",");
    out.push('\n');
    for r in record.rows.iter().chain(&record.means) {
        let m = &r.report;
        let mia = m.mia.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            csv_field(&r.method),
            csv_field(&r.seed),
            m.acc_retain,
            m.acc_test,
            m.f1_test,
            m.acc_forget,
            m.uqi,
            m.agree_test,
            mia,
            m.kl_retain,
            m.js_retain,
            m.kl_test,
            m.js_test,
            m.fidelity_mean,
            r.wall_s
        );
    }
    out
}

#[derive(Serialize)]
struct Metadata<'a> {
    config_hash: &'a str,
    version: &'a str,
    timestamp: u64,
    uqi_note: &'a str,
}

#[derive(Serialize)]
struct JsonReport<'a> {
    metadata: Metadata<'a>,
    rows: &'a [Row],
    means: &'a [Row],
    seeds: &'a [super::experiment::SeedRecord],
    errors: &'a [super::experiment::CellError],
}

pub fn to_json(record: &RunRecord, timestamp: u64) -> String {
    let doc = JsonReport {
        metadata: Metadata {
            config_hash: &record.config_hash,
            version: env!("CARGO_PKG_VERSION"),
            timestamp,
            uqi_note: UQI_NOTE,
        },
        rows: &record.rows,
        means: &record.means,
        seeds: &record.seeds,
        errors: &record.errors,
    };
    serde_json::to_string_pretty(&doc).expect("serializable")
}

/// Writes `report.csv` / `report.json` into `dir`, creating it. Returns the paths written.
pub fn emit_report(record: &RunRecord, dir: &Path, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for f in formats {
        let (name, body) = match f {
            ReportFormat::Csv => ("report.csv", to_csv(record)),
            ReportFormat::Json => {
                let ts = std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0);
                ("report.json", to_json(record, ts))
            }
        };
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
