//! Runner-protocol executable backed by the synthetic cost model.
//!
//! Benchmarks resolve against the built-in registry, or against the
//! directory named by `FHEPROF_REGISTRY` when set.

use std::process::ExitCode;

use fheprof_core::registry::Registry;
use fheprof_core::runner::{synthetic_execute, RunnerInvocation, THREAD_ENV};

fn run() -> anyhow::Result<String> {
    let exe = std::env::current_exe()?;
    let threads = std::env::var(THREAD_ENV).ok();
    let inv = RunnerInvocation::from_args(exe, std::env::args().skip(1), threads.as_deref())?;
    let registry = match std::env::var_os("FHEPROF_REGISTRY") {
        Some(dir) => Registry::from_dir(dir.as_ref())?,
        None => Registry::builtin(),
    };
    Ok(synthetic_execute(&inv, &registry)?.render())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("fheprof-synth: {e:#}");
            ExitCode::from(2)
        }
    }
}
