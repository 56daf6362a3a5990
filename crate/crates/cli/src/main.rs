use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use gdd_core::harness::{
    collect_reports, render_report, run_sweep, train_student, train_teacher, ReportFormat, Role,
    SweepAxis, TrainConfig,
};
use gdd_core::Error;

#[derive(Parser)]
#[command(
    name = "gdd",
    version,
    about = "Teacher/student feature distillation on a synthetic segmentation task"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a teacher with cross-entropy only.
    TrainTeacher {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train a student under the configured distillation method.
    TrainStudent {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train one student per (value, seed) pair along one axis.
    ///
    /// Parallelism is capped by GDD_THREADS (default 1).
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// sigma, inject_location, module_ablation, alpha or tau.
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
    },
    /// Collect every run report below a directory.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Write here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print a default config.
    DefaultConfig {
        #[arg(value_enum)]
        role: RoleArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum RoleArg {
    Teacher,
    Student,
}

fn sweep_threads() -> Result<usize, Error> {
    match std::env::var("GDD_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!(
                "GDD_THREADS must be a positive integer, got `{v}`"
            ))),
        },
    }
}

fn load(config: &Path, role: Role) -> anyhow::Result<TrainConfig> {
    let cfg = TrainConfig::from_file(config)?;
    if cfg.role != role {
        return Err(Error::Config(format!("{} expects role {role:?}", config.display())).into());
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::TrainTeacher { config } => {
            let cfg = load(&config, Role::Teacher)?;
            let (ckpt, report) = train_teacher(&cfg)?;
            writeln!(
                stdout,
                "teacher checkpoint {}\nval mIoU {:.4}  pixel acc {:.4}  ({:.1}s)",
                ckpt.display(),
                report.final_metrics.miou,
                report.final_metrics.pixel_acc,
                report.wall_seconds
            )?;
        }
        Command::TrainStudent { config } => {
            let cfg = load(&config, Role::Student)?;
            let report = train_student(&cfg)?;
            writeln!(
                stdout,
                "student ({}) report {}\nval mIoU {:.4}  pixel acc {:.4}  ({:.1}s)",
                cfg.distill.method,
                cfg.output_dir.display(),
                report.final_metrics.miou,
                report.final_metrics.pixel_acc,
                report.wall_seconds
            )?;
            if let Some(n) = report.aux_param_count {
                writeln!(stdout, "auxiliary parameters {n}")?;
            }
        }
        Command::Sweep {
            config,
            axis,
            values,
            seeds,
        } => {
            let cfg = load(&config, Role::Student)?;
            let axis: SweepAxis = axis.parse()?;
            let report = run_sweep(&cfg, axis, &values, &seeds, sweep_threads()?)?;
            write!(stdout, "{}", report.summary_table())?;
        }
        Command::Report {
            input,
            format,
            output,
        } => {
            let reports = collect_reports(&input)?;
            if reports.is_empty() {
                return Err(
                    Error::Config(format!("no run reports under {}", input.display())).into(),
                );
            }
            let format = match format {
                Format::Csv => ReportFormat::Csv,
                Format::Json => ReportFormat::Json,
            };
            let bytes = render_report(&reports, format)?;
            match output {
                Some(path) => std::fs::write(&path, bytes)
                    .with_context(|| format!("writing {}", path.display()))?,
                None => stdout.write_all(&bytes)?,
            }
        }
        Command::DefaultConfig { role } => {
            let cfg = match role {
                RoleArg::Teacher => TrainConfig::teacher_default(),
                RoleArg::Student => TrainConfig::student_default("runs/teacher/teacher.ckpt.json"),
            };
            writeln!(stdout, "{}", cfg.to_json()?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage_error = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage_error { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let config_error = e.downcast_ref::<Error>().is_some_and(Error::is_config);
            log::error!("{e:#}");
            ExitCode::from(if config_error { 1 } else { 2 })
        }
    }
}
