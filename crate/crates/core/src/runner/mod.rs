//! Contract between the framework and benchmark executables.
//!
//! A runner is invoked as
//!
//! ```text
//! <exe> --benchmark <name> --phase setup|full --config <path> --reps <n>
//! ```
//!
//! with the thread budget in [`THREAD_ENV`]. It prints a JSON self-report
//! framed by [`SELFREPORT_BEGIN`] / [`SELFREPORT_END`] lines on standard
//! output and keeps standard error for its own logging.

mod protocol;
pub mod synthetic;

use std::path::PathBuf;

use thiserror::Error;

pub(crate) use protocol::sanitize;
pub use protocol::{
    build_invocation, compute_repetitions, parse_self_report, resolve_executable, RunPhase, RunnerConfig,
    RunnerInvocation, SelfReport, MIN_PRIMITIVE_ROI_SECONDS, SELFREPORT_BEGIN, SELFREPORT_END, THREAD_ENV,
};
pub use synthetic::{
    synthetic_execute, synthetic_execute_with, synthetic_manifest, SyntheticCostModel, MANIFEST_PARAM, MODEL_PARAM,
};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("malformed self-report at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("self-report field `{field}`: {message}")]
    Schema { field: String, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
