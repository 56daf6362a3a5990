//! Training loops, sweeps and run reports.

mod config;
mod report;
mod sweep;
mod train;

pub use config::{Role, TrainConfig};
pub use report::{
    collect_reports, emit_report, render_csv, render_json, render_report, EpochRecord,
    FinalMetrics, ReportFormat, RunReport, CSV_COLUMNS, REPORT_FILE, TIMING_FILE,
};
pub use sweep::{run_sweep, ArmSummary, SweepAxis, SweepReport};
pub use train::{
    evaluate, load_teacher, train_student, train_teacher, STUDENT_CHECKPOINT, TEACHER_CHECKPOINT,
};
