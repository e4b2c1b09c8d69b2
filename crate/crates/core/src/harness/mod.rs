//! Instance generation, sweeps over episode counts and seeds, and reports.

mod generator;
mod report;
mod sweep;

pub use generator::{generate_instance, generate_kernel, EpisodeStream, GeneratorConfig};
pub use report::{emit_report, load_episodes, load_report_json, load_rows_csv, save_episodes, ReportFormat};
pub use sweep::{
    loglog_slope, mean_stderr, run_cell, sweep, sweep_outcomes, CellOutcome, SweepAggregate, SweepReport, SweepRow,
};
