use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::distill::{InjectLocation, Method};
use crate::error::{Error, Result};
use crate::harness::config::{Role, TrainConfig};
use crate::harness::report::{render_csv, RunReport};
use crate::harness::train::train_student;
use crate::io::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Sigma,
    InjectLocation,
    /// `baseline`, `cd`, `sn`, `cd_sn`, i.e. methods none, cwd, sn_only, gdd.
    ModuleAblation,
    Alpha,
    Tau,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Sigma => "sigma",
            SweepAxis::InjectLocation => "inject_location",
            SweepAxis::ModuleAblation => "module_ablation",
            SweepAxis::Alpha => "alpha",
            SweepAxis::Tau => "tau",
        }
    }

    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &TrainConfig, value: &str) -> Result<TrainConfig> {
        let mut cfg = base.clone();
        let d = &mut cfg.distill;
        let float = || {
            value.parse::<f64>().map_err(|_| {
                Error::Config(format!("{} value `{value}` is not a number", self.name()))
            })
        };
        let needs = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "{} axis needs {what}, base method is {}",
                    self.name(),
                    base.distill.method
                )))
            }
        };
        match self {
            SweepAxis::Sigma => {
                needs(d.method.uses_noise(), "a noise-injecting method")?;
                d.sigma = float()?;
            }
            SweepAxis::InjectLocation => {
                needs(d.method.uses_noise(), "a noise-injecting method")?;
                d.inject_location = value.parse::<InjectLocation>()?;
            }
            SweepAxis::ModuleAblation => {
                d.method = match value {
                    "baseline" | "none" => Method::None,
                    "cd" | "cwd" => Method::Cwd,
                    "sn" | "sn_only" => Method::SnOnly,
                    "cd_sn" | "cd&sn" | "gdd" => Method::Gdd,
                    other => {
                        return Err(Error::Config(format!(
                            "unknown module_ablation arm `{other}`"
                        )))
                    }
                };
            }
            SweepAxis::Alpha => {
                needs(d.method != Method::None, "a distillation method")?;
                d.alpha = float()?;
            }
            SweepAxis::Tau => {
                needs(d.method != Method::None, "a distillation method")?;
                d.tau = float()?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            SweepAxis::Sigma,
            SweepAxis::InjectLocation,
            SweepAxis::ModuleAblation,
            SweepAxis::Alpha,
            SweepAxis::Tau,
        ]
        .into_iter()
        .find(|a| a.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown sweep axis `{s}`")))
    }
}

/// Final-mIoU statistics of one axis value across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub value: String,
    pub method: Method,
    pub runs: usize,
    pub mean_miou: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std_miou: f64,
    pub mean_pixel_acc: f64,
    /// Final mIoU per seed, in seed-list order.
    pub per_seed_miou: Vec<f64>,
}

impl ArmSummary {
    fn from_runs(value: &str, runs: &[&RunReport]) -> Self {
        let miou: Vec<f64> = runs.iter().map(|r| r.final_metrics.miou).collect();
        let n = miou.len() as f64;
        let mean = miou.iter().sum::<f64>() / n;
        let var = if miou.len() > 1 {
            miou.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        ArmSummary {
            value: value.to_string(),
            method: runs[0].config.distill.method,
            runs: runs.len(),
            mean_miou: mean,
            std_miou: var.sqrt(),
            mean_pixel_acc: runs.iter().map(|r| r.final_metrics.pixel_acc).sum::<f64>() / n,
            per_seed_miou: miou,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub values: Vec<String>,
    pub seeds: Vec<u64>,
    /// Value-major, then seed order.
    pub runs: Vec<RunReport>,
    pub summary: Vec<ArmSummary>,
}

impl SweepReport {
    pub fn arm(&self, value: &str) -> Option<&ArmSummary> {
        self.summary.iter().find(|a| a.value == value)
    }

    /// Plain-text table of the summary block.
    pub fn summary_table(&self) -> String {
        let mut out = format!(
            "{:<16} {:<8} {:>4} {:>10} {:>10} {:>10}\n",
            self.axis.name(),
            "method",
            "runs",
            "mean_miou",
            "std_miou",
            "pixel_acc"
        );
        for a in &self.summary {
            out += &format!(
                "{:<16} {:<8} {:>4} {:>10.4} {:>10.4} {:>10.4}\n",
                a.value,
                a.method.name(),
                a.runs,
                a.mean_miou,
                a.std_miou,
                a.mean_pixel_acc
            );
        }
        out
    }
}

/// Directory of the sweep under `base.output_dir`.
pub fn sweep_dir(base: &TrainConfig, axis: SweepAxis) -> PathBuf {
    base.output_dir.join(format!("sweep-{}", axis.name()))
}

/// Train one student per `(value, seed)` pair, using up to `threads` worker
/// threads, then write `runs.csv` and `summary.json` into the sweep directory.
pub fn run_sweep(
    base: &TrainConfig,
    axis: SweepAxis,
    values: &[String],
    seeds: &[u64],
    threads: usize,
) -> Result<SweepReport> {
    if base.role != Role::Student {
        return Err(Error::Config(
            "sweeps train students; base role must be student".into(),
        ));
    }
    if values.is_empty() || seeds.is_empty() {
        return Err(Error::Config(
            "sweep needs at least one value and one seed".into(),
        ));
    }
    let root = sweep_dir(base, axis);
    let mut jobs = Vec::with_capacity(values.len() * seeds.len());
    for value in values {
        let arm = axis.apply(base, value)?;
        for &seed in seeds {
            let mut cfg = arm.clone();
            cfg.seed = seed;
            cfg.output_dir = root.join(format!("{}={value}_seed={seed}", axis.name()));
            jobs.push(cfg);
        }
    }

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunReport>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, jobs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cfg) = jobs.get(i) else { break };
                log::info!(
                    "sweep run {}/{}: {}",
                    i + 1,
                    jobs.len(),
                    cfg.output_dir.display()
                );
                let outcome = train_student(cfg);
                results.lock().expect("no worker panicked")[i] = Some(outcome);
            });
        }
    });
    let runs = results
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect::<Result<Vec<_>>>()?;

    let summary = values
        .iter()
        .zip(runs.chunks(seeds.len()))
        .map(|(value, chunk)| ArmSummary::from_runs(value, &chunk.iter().collect::<Vec<_>>()))
        .collect();
    let report = SweepReport {
        axis,
        values: values.to_vec(),
        seeds: seeds.to_vec(),
        runs,
        summary,
    };
    write_atomic(&root.join("runs.csv"), &render_csv(&report.runs)?)?;
    let mut summary_json = serde_json::to_vec_pretty(&report.summary)?;
    summary_json.push(b'\n');
    write_atomic(&root.join("summary.json"), &summary_json)?;
    Ok(report)
}
