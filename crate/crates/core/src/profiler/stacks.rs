use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::Instant;

use super::child::ChildOutcome;
use super::ProfileError;

/// Default sampling frequency, offset from common timer harmonics.
pub const DEFAULT_SAMPLE_HZ: u32 = 99;

/// Runs a command under a call-stack sampler and returns the sampler's
/// textual stack dump.
pub trait StackRecorder: Send + Sync {
    fn record(&self, cmd: Command, workdir: &Path) -> Result<(ChildOutcome, String), ProfileError>;
}

/// `perf record -g` followed by `perf script`.
#[derive(Debug, Clone)]
pub struct PerfRecord {
    pub perf: PathBuf,
    pub frequency: u32,
}

impl Default for PerfRecord {
    fn default() -> Self {
        PerfRecord {
            perf: PathBuf::from("perf"),
            frequency: DEFAULT_SAMPLE_HZ,
        }
    }
}

fn missing_perf(perf: &Path, e: std::io::Error) -> ProfileError {
    ProfileError::Capability(format!("cannot run {}: {e}", perf.display()))
}

impl StackRecorder for PerfRecord {
    fn record(&self, cmd: Command, workdir: &Path) -> Result<(ChildOutcome, String), ProfileError> {
        std::fs::create_dir_all(workdir).map_err(ProfileError::Spawn)?;
        let data = workdir.join("perf.data");
        let mut rec = Command::new(&self.perf);
        rec.arg("record")
            .arg("-F")
            .arg(self.frequency.to_string())
            .arg("-g")
            .arg("-o")
            .arg(&data)
            .arg("--")
            .arg(cmd.get_program())
            .args(cmd.get_args());
        for (k, v) in cmd.get_envs() {
            match v {
                Some(v) => rec.env(k, v),
                None => rec.env_remove(k),
            };
        }
        rec.stdin(Stdio::null());
        let start = Instant::now();
        let out = rec.output().map_err(|e| missing_perf(&self.perf, e))?;
        let wall_time = start.elapsed().as_secs_f64();
        let outcome = ChildOutcome {
            wall_time,
            energy: None,
            counts: Default::default(),
            exit_status: out.status.code().unwrap_or(128),
            stdout: out.stdout,
            stderr: out.stderr,
        };
        if outcome.exit_status != 0 {
            return Ok((outcome, String::new()));
        }
        let script = Command::new(&self.perf)
            .arg("script")
            .arg("-i")
            .arg(&data)
            .stdin(Stdio::null())
            .output()
            .map_err(|e| missing_perf(&self.perf, e))?;
        if !script.status.success() {
            return Err(ProfileError::Counter(format!(
                "perf script failed: {}",
                String::from_utf8_lossy(&script.stderr).trim()
            )));
        }
        Ok((outcome, String::from_utf8_lossy(&script.stdout).into_owned()))
    }
}
