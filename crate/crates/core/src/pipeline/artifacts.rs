//! Run directory: `run.json`, `results.csv`, `timings.csv`, optional
//! `masks/`, and the rendered reports.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{RunOutcome, SampleResult, Skipped};
use crate::evalstats::{
    build_reports, quantiles_csv, read_results_csv, render_report, write_results_csv, MethodInfo, Report, ReportKind,
    ReportMeta, ResultRow, StatsError,
};
use crate::geom::rle_encode;

pub const RUN_JSON: &str = "run.json";
pub const RESULTS_CSV: &str = "results.csv";
const TIMINGS_CSV: &str = "timings.csv";
const QUANTILES_CSV: &str = "quantiles.csv";
const REPORT_MD: &str = "report.md";
const REPORT_JSON: &str = "report.json";

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ArtifactError {
    ArtifactError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvStamp {
    pub tool: String,
    pub version: String,
    pub os: String,
    pub arch: String,
}

impl EnvStamp {
    pub fn current() -> Self {
        EnvStamp {
            tool: "tvseg".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
        }
    }
}

/// Contents of `run.json`: enough to re-render the reports and to
/// reproduce the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub kind: ReportKind,
    pub seed: u64,
    pub methods: Vec<MethodInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ks: Option<Vec<usize>>,
    pub evaluated: usize,
    pub skipped: Vec<Skipped>,
    /// Fully resolved configuration.
    pub config: serde_json::Value,
    pub environment: EnvStamp,
}

fn row_of(r: &SampleResult) -> ResultRow {
    ResultRow {
        sample_id: r.sample_id.clone(),
        dataset: r.dataset.clone(),
        method: r.method.clone(),
        dice: r.dice,
        grounding_miss: r.grounding_miss,
        backend_error: r.backend_error,
        boxes: r.boxes.len(),
        prompt: r.prompt.clone().unwrap_or_default(),
        error: r.error.clone().unwrap_or_default(),
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), ArtifactError> {
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn file_stem_safe(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes the run directory and renders its reports.
pub fn write_run_dir(
    dir: &Path,
    record: &RunRecord,
    outcome: &RunOutcome,
    dump_masks: bool,
) -> Result<Report, ArtifactError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let json = serde_json::to_string_pretty(record).expect("run record serializes") + "\n";
    write(&dir.join(RUN_JSON), json)?;

    let rows: Vec<ResultRow> = outcome.results.iter().map(row_of).collect();
    let mut buf = Vec::new();
    write_results_csv(&rows, &mut buf).map_err(|e| io_err(&dir.join(RESULTS_CSV), e))?;
    write(&dir.join(RESULTS_CSV), buf)?;

    let mut timings = String::from("sample_id,dataset,method,chat_ms,detect_ms,segment_ms\n");
    {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        for r in &outcome.results {
            let t = r.timings;
            w.write_record([
                r.sample_id.as_str(),
                &r.dataset,
                &r.method,
                &format!("{:.3}", t.chat_ms),
                &format!("{:.3}", t.detect_ms),
                &format!("{:.3}", t.segment_ms),
            ])
            .map_err(|e| io_err(&dir.join(TIMINGS_CSV), e))?;
        }
        let bytes = w.into_inner().map_err(|e| io_err(&dir.join(TIMINGS_CSV), e))?;
        timings.push_str(&String::from_utf8_lossy(&bytes));
    }
    write(&dir.join(TIMINGS_CSV), timings)?;

    let masks_dir = dir.join("masks");
    if masks_dir.is_dir() {
        // masks from an earlier run into the same directory would be stale
        std::fs::remove_dir_all(&masks_dir).map_err(|e| io_err(&masks_dir, e))?;
    }
    if dump_masks {
        for r in &outcome.results {
            let Some(mask) = &r.mask else { continue };
            let sub = masks_dir.join(file_stem_safe(&r.method));
            std::fs::create_dir_all(&sub).map_err(|e| io_err(&sub, e))?;
            let rle = rle_encode(mask);
            let body = serde_json::json!({ "w": rle.width, "h": rle.height, "runs": rle.runs });
            let name = format!("{}__{}.json", file_stem_safe(&r.dataset), file_stem_safe(&r.sample_id));
            write(&sub.join(name), body.to_string() + "\n")?;
        }
    }
    render_run_dir(dir)
}

/// Rebuilds `report.md`, `report.json` and `quantiles.csv` from `run.json`
/// and `results.csv` alone.
pub fn render_run_dir(dir: &Path) -> Result<Report, ArtifactError> {
    let run_path = dir.join(RUN_JSON);
    let text = std::fs::read_to_string(&run_path).map_err(|e| io_err(&run_path, e))?;
    let record: RunRecord = serde_json::from_str(&text).map_err(|e| io_err(&run_path, e))?;
    let results_path = dir.join(RESULTS_CSV);
    let file = std::fs::File::open(&results_path).map_err(|e| io_err(&results_path, e))?;
    let rows = read_results_csv(file).map_err(|e| io_err(&results_path, e))?;

    let (methods, tests) = build_reports(&record.methods, &rows)?;
    let mut notes = Vec::new();
    if let Some(ks) = &record.ks {
        let ks: Vec<String> = ks.iter().map(usize::to_string).collect();
        notes.push(format!(
            "k in {{{}}}; every row selects from a prefix of one candidate pool per sample",
            ks.join(", ")
        ));
    }
    let meta = ReportMeta {
        seed: record.seed,
        samples: record.evaluated,
        skipped: record.skipped.len(),
        notes,
    };
    let report = Report::new(record.kind, meta, methods, tests);
    let (md, json) = render_report(&report);
    write(&dir.join(REPORT_MD), md)?;
    write(&dir.join(REPORT_JSON), json)?;
    let labels: Vec<String> = record.methods.iter().map(|m| m.label.clone()).collect();
    write(&dir.join(QUANTILES_CSV), quantiles_csv(&labels, &rows))?;
    Ok(report)
}
