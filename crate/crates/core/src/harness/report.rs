use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::TrainConfig;
use crate::io::{read_to_string, write_atomic};
use crate::synth::ConfusionMatrix;

pub const REPORT_FILE: &str = "report.json";
pub const TIMING_FILE: &str = "timing.json";

/// Means over the batches of one epoch, then validation metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub task_loss: f64,
    /// Unweighted distillation loss; 0 when no distillation term is computed.
    pub distill_loss: f64,
    pub total_loss: f64,
    pub val_miou: f64,
    pub val_pixel_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub pixel_acc: f64,
    pub confusion: ConfusionMatrix,
}

/// Outcome of one training run.
///
/// Everything serialized is a pure function of the config, so two runs of
/// the same config produce byte-identical JSON. Wall-clock time is kept in a
/// separate sidecar file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub records: Vec<EpochRecord>,
    #[serde(rename = "final")]
    pub final_metrics: FinalMetrics,
    /// Align plus generator parameters, when the method has any auxiliaries.
    pub aux_param_count: Option<usize>,
    /// Student parameters copied from the teacher.
    pub inherited_params: usize,
    #[serde(skip)]
    pub wall_seconds: f64,
}

#[derive(Serialize, Deserialize)]
struct Timing {
    wall_seconds: f64,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Write `report.json` and the `timing.json` sidecar into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join(REPORT_FILE), self.to_json()?.as_bytes())?;
        let timing = serde_json::to_vec(&Timing {
            wall_seconds: self.wall_seconds,
        })?;
        write_atomic(&dir.join(TIMING_FILE), &timing)
    }

    /// Load a run directory; a missing timing sidecar reads as 0 seconds.
    pub fn load(dir: &Path) -> Result<Self> {
        let mut report = Self::from_json(&read_to_string(&dir.join(REPORT_FILE))?)?;
        let timing = dir.join(TIMING_FILE);
        if timing.exists() {
            let t: Timing = serde_json::from_str(&read_to_string(&timing)?)?;
            report.wall_seconds = t.wall_seconds;
        }
        Ok(report)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Config(format!("unknown report format `{other}`"))),
        }
    }
}

pub const CSV_COLUMNS: [&str; 11] = [
    "run_id",
    "method",
    "alpha",
    "tau",
    "sigma",
    "inject_location",
    "seed",
    "epochs",
    "final_miou",
    "final_pixel_acc",
    "wall_seconds",
];

/// One row per report under [`CSV_COLUMNS`]. Floats use Rust's shortest
/// round-trip formatting.
pub fn render_csv(reports: &[RunReport]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS)?;
    for r in reports {
        let d = &r.config.distill;
        w.write_record([
            r.run_id.clone(),
            d.method.name().to_string(),
            d.alpha.to_string(),
            d.tau.to_string(),
            d.sigma.to_string(),
            d.inject_location.name().to_string(),
            r.seed.to_string(),
            r.config.epochs.to_string(),
            r.final_metrics.miou.to_string(),
            r.final_metrics.pixel_acc.to_string(),
            r.wall_seconds.to_string(),
        ])?;
    }
    w.into_inner()
        .map_err(|e| Error::Metric(format!("csv flush failed: {e}")))
}

/// JSON array of the reports, each exactly as in its `report.json`.
pub fn render_json(reports: &[RunReport]) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(reports)?;
    out.push(b'\n');
    Ok(out)
}

pub fn render_report(reports: &[RunReport], format: ReportFormat) -> Result<Vec<u8>> {
    match format {
        ReportFormat::Csv => render_csv(reports),
        ReportFormat::Json => render_json(reports),
    }
}

pub fn emit_report(reports: &[RunReport], format: ReportFormat, path: &Path) -> Result<()> {
    write_atomic(path, &render_report(reports, format)?)
}

/// Every run directory below `root` (any directory holding `report.json`),
/// sorted by path.
pub fn collect_reports(root: &Path) -> Result<Vec<RunReport>> {
    let mut dirs = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        if dir.join(REPORT_FILE).is_file() {
            dirs.push(dir.clone());
        }
        for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
            }
        }
    }
    dirs.sort();
    dirs.iter().map(|d| RunReport::load(d)).collect()
}
