//! Experiment configs, grids, run directories and reports around the `crgan`
//! training library.

pub mod config;
pub mod error;
pub mod grid;
pub mod report;
pub mod runner;
pub mod samples;
pub mod timing;

pub use config::{load_config, parse_config, ExperimentConfig};
pub use error::{HarnessError, Result};
pub use grid::{GridPoint, GridSpec};
pub use report::emit_report;
pub use runner::{run_grid, ReportRow, RunOptions};
