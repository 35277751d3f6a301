//! Experiment orchestration for dilution studies: manifests, resumable
//! sweeps and plot-ready reports.

pub mod commands;
pub mod manifest;
pub mod report;
pub mod sweep;

pub use manifest::{CorpusSource, GridPoint, Manifest, Setting, TriggerSource};
pub use report::{report, ReportKind, Table};
pub use sweep::{run_sweep, Experiment, ResultRow, SummaryRow, SweepOutcome};
