//! Sweep planning, plan execution, the results store and reports.

mod analysis;
mod execute;
mod report;
mod store;
mod sweep;

use std::path::PathBuf;

use thiserror::Error;

pub use analysis::{cost_table, predict_from_store, validate_benchmark, ValidationOutcome};
pub use execute::{execute_plan, load_denoised, ExecutionSummary, PointFailure};
pub use report::{fmt_percent, fmt_seconds, fmt_speedup, report, Report, ReportKind};
pub use store::{ResultRow, ResultStore, RowFilter, RowKind, SCHEMA_VERSION};
pub use sweep::{
    generate_sweep, point_id, DroppedPoint, EventSpec, PlanPoint, RunPlan, SweepSpec, DEFAULT_RUNS_PER_POINT,
};

use crate::model::ModelError;
use crate::registry::RegistryError;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("sweep specification: {0}")]
    Spec(String),
    #[error("sweep produced no valid points:\n  {}", .0.join("\n  "))]
    EmptyPlan(Vec<String>),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("results store: {0}")]
    Schema(String),
    #[error("results store schema version {found} needs migration; this build reads version {supported}")]
    Migration { found: u32, supported: u32 },
    #[error("results store is locked by another writer ({}, holder `{holder}`)", path.display())]
    Lock { path: PathBuf, holder: String },
}
