use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ProtocolError;
use crate::registry::{BenchmarkSpec, CryptoConfig};

/// Environment variable carrying the thread budget to the benchmark.
pub const THREAD_ENV: &str = "OMP_NUM_THREADS";
pub const SELFREPORT_BEGIN: &str = "===SELFREPORT-BEGIN===";
pub const SELFREPORT_END: &str = "===SELFREPORT-END===";

/// Cumulative runtime a primitive run must reach before per-call averaging.
pub const MIN_PRIMITIVE_ROI_SECONDS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunPhase {
    /// Initialization only (deserialization of context, keys and inputs).
    Setup,
    /// Initialization followed by the region of interest.
    Full,
}

impl RunPhase {
    pub fn as_str(self) -> &'static str {
        match self {
            RunPhase::Setup => "setup",
            RunPhase::Full => "full",
        }
    }
}

impl fmt::Display for RunPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RunPhase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "setup" => Ok(RunPhase::Setup),
            "full" => Ok(RunPhase::Full),
            other => Err(format!("unknown phase `{other}` (expected setup|full)")),
        }
    }
}

/// Document handed to the runner through `--config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunnerConfig {
    pub benchmark: String,
    pub crypto: CryptoConfig,
    #[serde(default)]
    pub extra_params: BTreeMap<String, Value>,
    /// Directory of serialized context, keys and input ciphertexts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact_dir: Option<PathBuf>,
}

impl RunnerConfig {
    pub fn load(path: &Path) -> Result<Self, ProtocolError> {
        let bytes = std::fs::read(path).map_err(|source| ProtocolError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_slice(&bytes).map_err(|e| ProtocolError::Parse {
            offset: line_col_to_offset(&bytes, e.line(), e.column()),
            message: format!("{}: {e}", path.display()),
        })
    }

    /// Writes the document into `dir` under a name derived from its content,
    /// so identical configurations share one file.
    pub fn write_into(&self, dir: &Path) -> Result<PathBuf, ProtocolError> {
        use sha2::{Digest, Sha256};
        let body = serde_json::to_vec_pretty(self).expect("runner config serializes");
        let tag = hex::encode(&Sha256::digest(&body)[..6]);
        let name = format!("{}-{}-{tag}.json", sanitize(&self.benchmark), self.crypto.label());
        let path = dir.join(name);
        std::fs::create_dir_all(dir).map_err(|source| ProtocolError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        if !path.exists() {
            std::fs::write(&path, body).map_err(|source| ProtocolError::Io {
                path: path.clone(),
                source,
            })?;
        }
        Ok(path)
    }
}

pub(crate) fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

/// One child-process execution request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunnerInvocation {
    pub executable: PathBuf,
    pub benchmark: String,
    pub phase: RunPhase,
    pub config_path: PathBuf,
    pub thread_count: u32,
    pub repetitions: u64,
}

impl RunnerInvocation {
    pub fn with_phase(&self, phase: RunPhase) -> Self {
        RunnerInvocation { phase, ..self.clone() }
    }

    pub fn args(&self) -> Vec<OsString> {
        vec![
            "--benchmark".into(),
            self.benchmark.clone().into(),
            "--phase".into(),
            self.phase.as_str().into(),
            "--config".into(),
            self.config_path.clone().into_os_string(),
            "--reps".into(),
            self.repetitions.to_string().into(),
        ]
    }

    /// The child command: argv per protocol, thread budget in [`THREAD_ENV`].
    pub fn command(&self) -> Command {
        let mut cmd = Command::new(&self.executable);
        cmd.args(self.args()).env(THREAD_ENV, self.thread_count.to_string());
        cmd
    }

    /// Reconstructs an invocation from a runner's own argv (without argv[0])
    /// and the value of [`THREAD_ENV`].
    pub fn from_args<I, S>(executable: PathBuf, args: I, thread_env: Option<&str>) -> Result<Self, ProtocolError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut benchmark = None;
        let mut phase = None;
        let mut config = None;
        let mut reps = None;
        let mut it = args.into_iter().map(Into::into);
        while let Some(flag) = it.next() {
            let mut value = || {
                it.next()
                    .ok_or_else(|| ProtocolError::Argument(format!("{flag} expects a value")))
            };
            match flag.as_str() {
                "--benchmark" => benchmark = Some(value()?),
                "--phase" => phase = Some(value()?.parse().map_err(ProtocolError::Argument)?),
                "--config" => config = Some(PathBuf::from(value()?)),
                "--reps" => {
                    let v = value()?;
                    reps = Some(
                        v.parse::<u64>()
                            .map_err(|_| ProtocolError::Argument(format!("--reps expects an integer, got `{v}`")))?,
                    )
                }
                other => return Err(ProtocolError::Argument(format!("unexpected argument `{other}`"))),
            }
        }
        let missing = |f: &str| ProtocolError::Argument(format!("missing {f}"));
        let thread_count = match thread_env {
            None => 1,
            Some(t) => t
                .trim()
                .parse::<u32>()
                .map_err(|_| ProtocolError::Argument(format!("{THREAD_ENV} must be a positive integer, got `{t}`")))?,
        };
        if thread_count == 0 {
            return Err(ProtocolError::Argument(format!("{THREAD_ENV} must be at least 1")));
        }
        let repetitions = reps.unwrap_or(1);
        if repetitions == 0 {
            return Err(ProtocolError::Argument("--reps must be at least 1".into()));
        }
        Ok(RunnerInvocation {
            executable,
            benchmark: benchmark.ok_or_else(|| missing("--benchmark"))?,
            phase: phase.ok_or_else(|| missing("--phase"))?,
            config_path: config.ok_or_else(|| missing("--config"))?,
            thread_count,
            repetitions,
        })
    }
}

/// Smallest repetition count whose cumulative runtime reaches 500 ms.
pub fn compute_repetitions(per_call_estimate: f64) -> Result<u64, ProtocolError> {
    if !(per_call_estimate > 0.0) || !per_call_estimate.is_finite() {
        return Err(ProtocolError::Argument(format!(
            "per-call estimate must be positive, got {per_call_estimate}"
        )));
    }
    let target = MIN_PRIMITIVE_ROI_SECONDS;
    let mut r = (target / per_call_estimate).ceil().max(1.0);
    // 0.5 / 0.002 lands one ulp above 250 in binary floating point
    if r > 1.0 && (r - 1.0) * per_call_estimate >= target * (1.0 - 1e-12) {
        r -= 1.0;
    }
    if r >= u64::MAX as f64 {
        return Err(ProtocolError::Argument(format!(
            "per-call estimate {per_call_estimate} s needs an unrepresentable repetition count"
        )));
    }
    Ok(r as u64)
}

/// Resolves a runner binding: bare names are looked up on `PATH`.
pub fn resolve_executable(runner: &str) -> PathBuf {
    let p = Path::new(runner);
    if p.components().count() > 1 || p.is_absolute() {
        return p.to_path_buf();
    }
    if let Some(paths) = std::env::var_os("PATH") {
        for dir in std::env::split_paths(&paths) {
            let cand = dir.join(runner);
            if cand.is_file() {
                return cand;
            }
        }
    }
    p.to_path_buf()
}

/// Builds the invocation for one (benchmark, configuration, phase) point.
///
/// `config_path` must point at a [`RunnerConfig`] describing `config`.
pub fn build_invocation(
    spec: &BenchmarkSpec,
    config: &CryptoConfig,
    phase: RunPhase,
    threads: u32,
    repetitions: u64,
    config_path: &Path,
) -> Result<RunnerInvocation, ProtocolError> {
    if threads < 1 {
        return Err(ProtocolError::Argument("thread count must be at least 1".into()));
    }
    if repetitions < 1 {
        return Err(ProtocolError::Argument("repetitions must be at least 1".into()));
    }
    if repetitions > 1 && !spec.is_primitive() {
        return Err(ProtocolError::Argument(format!(
            "{} is a {}; only primitives take repetitions > 1",
            spec.name, spec.level
        )));
    }
    config.validate().map_err(|v| {
        ProtocolError::Argument(format!(
            "invalid configuration {config}: {}",
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
        ))
    })?;
    Ok(RunnerInvocation {
        executable: resolve_executable(&spec.runner),
        benchmark: spec.name.clone(),
        phase,
        config_path: config_path.to_path_buf(),
        thread_count: threads,
        repetitions,
    })
}

/// Structured payload a benchmark prints between the sentinel lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfReport {
    pub benchmark: String,
    pub phase: RunPhase,
    pub repetitions_executed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_roi_seconds: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamic_counts: Option<BTreeMap<String, u64>>,
}

impl SelfReport {
    /// The framed payload, newline-terminated.
    pub fn render(&self) -> String {
        format!(
            "{SELFREPORT_BEGIN}\n{}\n{SELFREPORT_END}\n",
            serde_json::to_string_pretty(self).expect("self report serializes")
        )
    }
}

fn line_col_to_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut current = 1;
    let mut start = 0;
    for (i, &b) in bytes.iter().enumerate() {
        if current == line {
            break;
        }
        if b == b'\n' {
            current += 1;
            start = i + 1;
        }
    }
    (start + column.saturating_sub(1)).min(bytes.len())
}

/// Locates the framed document in `raw` and returns its byte range.
fn framed_document(raw: &[u8]) -> Result<(usize, usize), ProtocolError> {
    let mut begin = None;
    let mut pos = 0;
    for line in raw.split_inclusive(|&b| b == b'\n') {
        let text = trim_eol(line);
        match begin {
            None if text == SELFREPORT_BEGIN.as_bytes() => begin = Some(pos + line.len()),
            Some(b) if text == SELFREPORT_END.as_bytes() => return Ok((b, pos)),
            _ => {}
        }
        pos += line.len();
    }
    Err(ProtocolError::Parse {
        offset: raw.len(),
        message: match begin {
            None => format!("no {SELFREPORT_BEGIN} line in output"),
            Some(_) => format!("unterminated self-report: no {SELFREPORT_END} line"),
        },
    })
}

fn trim_eol(line: &[u8]) -> &[u8] {
    let line = line.strip_suffix(b"\n").unwrap_or(line);
    line.strip_suffix(b"\r").unwrap_or(line)
}

/// Parses the self-report framed in a benchmark's standard output.
///
/// Unknown fields are ignored. Malformed JSON yields [`ProtocolError::Parse`]
/// with the absolute byte offset; missing or mistyped mandatory fields yield
/// [`ProtocolError::Schema`].
pub fn parse_self_report(raw: &[u8]) -> Result<SelfReport, ProtocolError> {
    let (start, end) = framed_document(raw)?;
    let doc = &raw[start..end];
    let value: Value = serde_json::from_slice(doc).map_err(|e| ProtocolError::Parse {
        offset: start + line_col_to_offset(doc, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let obj = value.as_object().ok_or_else(|| ProtocolError::Schema {
        field: "<root>".into(),
        message: "self-report must be an object".into(),
    })?;
    let schema = |field: &str, message: &str| ProtocolError::Schema {
        field: field.to_string(),
        message: message.to_string(),
    };
    let benchmark = obj
        .get("benchmark")
        .ok_or_else(|| schema("benchmark", "missing"))?
        .as_str()
        .ok_or_else(|| schema("benchmark", "must be a string"))?
        .to_string();
    let phase = obj
        .get("phase")
        .ok_or_else(|| schema("phase", "missing"))?
        .as_str()
        .ok_or_else(|| schema("phase", "must be a string"))?
        .parse::<RunPhase>()
        .map_err(|e| schema("phase", &e))?;
    let repetitions_executed = obj
        .get("repetitions_executed")
        .ok_or_else(|| schema("repetitions_executed", "missing"))?
        .as_u64()
        .ok_or_else(|| schema("repetitions_executed", "must be a non-negative integer"))?;
    let inner_roi_seconds = match obj.get("inner_roi_seconds") {
        None | Some(Value::Null) => None,
        Some(v) => {
            let s = v
                .as_f64()
                .ok_or_else(|| schema("inner_roi_seconds", "must be a number"))?;
            if !(s >= 0.0) {
                return Err(schema("inner_roi_seconds", "must be non-negative"));
            }
            Some(s)
        }
    };
    let dynamic_counts = match obj.get("dynamic_counts") {
        None | Some(Value::Null) => None,
        Some(Value::Object(m)) => {
            let mut counts = BTreeMap::new();
            for (k, v) in m {
                let c = v.as_u64().ok_or_else(|| {
                    schema(
                        "dynamic_counts",
                        &format!("count for `{k}` must be a non-negative integer"),
                    )
                })?;
                counts.insert(k.clone(), c);
            }
            Some(counts)
        }
        Some(_) => return Err(schema("dynamic_counts", "must be an object")),
    };
    Ok(SelfReport {
        benchmark,
        phase,
        repetitions_executed,
        inner_roi_seconds,
        dynamic_counts,
    })
}
