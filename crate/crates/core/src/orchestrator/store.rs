//! Results store: a directory of append-only CSV files, one per row kind,
//! next to a manifest carrying the schema version.
//!
//! ```text
//! <root>/store.toml          format and schema version
//! <root>/measurement.csv     one row per profiled run plus per-pass medians
//! <root>/denoised.csv        one row per completed plan point
//! <root>/prediction.csv
//! <root>/validation.csv
//! <root>/configs/            runner configuration documents
//! <root>/artifacts/<hash>/   serialized crypto artifacts per configuration
//! <root>/stacks/             folded stacks and flame graphs
//! ```
//!
//! A single process may hold the store for writing at a time; readers take no
//! lock. Columns this build does not know are kept when a file is rewritten.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use log::warn;
use serde::{Deserialize, Serialize};

use super::OrchestratorError;
use crate::denoise::DenoisedMetrics;
use crate::model::{CostKey, Prediction, SignedError};
use crate::profiler::{MeasurementRecord, ProfilingPass};
use crate::registry::{CryptoConfig, SecurityStandard};
use crate::runner::RunPhase;

pub const SCHEMA_VERSION: u32 = 1;
const FORMAT: &str = "fheprof-results";
const MANIFEST: &str = "store.toml";
const LOCK: &str = ".writer.lock";

const LEADING: &[&str] = &[
    "schema_version",
    "row_kind",
    "benchmark",
    "log2_ring_dim",
    "depth",
    "batch_size",
    "security_standard",
    "thread_count",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    Measurement,
    Denoised,
    Prediction,
    Validation,
}

impl RowKind {
    pub const ALL: [RowKind; 4] = [
        RowKind::Measurement,
        RowKind::Denoised,
        RowKind::Prediction,
        RowKind::Validation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RowKind::Measurement => "measurement",
            RowKind::Denoised => "denoised",
            RowKind::Prediction => "prediction",
            RowKind::Validation => "validation",
        }
    }

    fn file_name(self) -> String {
        format!("{}.csv", self.as_str())
    }
}

impl fmt::Display for RowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RowKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RowKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown row kind `{s}`"))
    }
}

/// One flat store row. Empty values are treated as absent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResultRow {
    pub kind: RowKind,
    pub fields: BTreeMap<String, String>,
}

fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn schema(msg: impl Into<String>) -> OrchestratorError {
    OrchestratorError::Schema(msg.into())
}

impl ResultRow {
    fn new(kind: RowKind, benchmark: &str, config: &CryptoConfig, threads: u32) -> Self {
        let mut row = ResultRow {
            kind,
            fields: BTreeMap::new(),
        };
        row.set("schema_version", SCHEMA_VERSION);
        row.set("row_kind", kind);
        row.set("benchmark", benchmark);
        row.set("log2_ring_dim", config.log2_ring_dim);
        row.set("depth", config.depth);
        row.set("batch_size", config.batch_size);
        row.set("security_standard", config.security_standard);
        row.set("thread_count", threads);
        row
    }

    pub fn set(&mut self, column: &str, value: impl ToString) {
        let v = value.to_string();
        if v.is_empty() {
            self.fields.remove(column);
        } else {
            self.fields.insert(column.to_string(), v);
        }
    }

    fn set_f64(&mut self, column: &str, value: Option<f64>) {
        match value {
            Some(v) => self.set(column, fmt_f64(v)),
            None => {
                self.fields.remove(column);
            }
        }
    }

    pub fn get(&self, column: &str) -> Option<&str> {
        self.fields.get(column).map(String::as_str)
    }

    fn require(&self, column: &str) -> Result<&str, OrchestratorError> {
        self.get(column)
            .ok_or_else(|| schema(format!("{} row lacks column `{column}`", self.kind)))
    }

    fn parse<T: FromStr>(&self, column: &str) -> Result<T, OrchestratorError>
    where
        T::Err: fmt::Display,
    {
        let v = self.require(column)?;
        v.parse()
            .map_err(|e| schema(format!("{} column `{column}` = `{v}`: {e}", self.kind)))
    }

    pub fn f64(&self, column: &str) -> Result<Option<f64>, OrchestratorError> {
        self.get(column).map(|_| self.parse(column)).transpose()
    }

    fn prefixed(&self, prefix: &str) -> Result<BTreeMap<String, f64>, OrchestratorError> {
        let mut out = BTreeMap::new();
        for (k, v) in &self.fields {
            if let Some(name) = k.strip_prefix(prefix) {
                let x: f64 = v.parse().map_err(|e| schema(format!("column `{k}` = `{v}`: {e}")))?;
                out.insert(name.to_string(), x);
            }
        }
        Ok(out)
    }

    pub fn benchmark(&self) -> &str {
        self.get("benchmark").unwrap_or_default()
    }

    pub fn config(&self) -> Result<CryptoConfig, OrchestratorError> {
        let sec: SecurityStandard = self.parse("security_standard")?;
        Ok(CryptoConfig::new(
            self.parse("log2_ring_dim")?,
            self.parse("depth")?,
            self.parse("batch_size")?,
        )
        .with_security(sec))
    }

    pub fn thread_count(&self) -> Result<u32, OrchestratorError> {
        self.parse("thread_count")
    }

    pub fn key(&self) -> Result<CostKey, OrchestratorError> {
        Ok(CostKey::new(self.config()?, self.thread_count()?))
    }

    pub fn from_measurement(r: &MeasurementRecord, point: &str) -> Self {
        let mut row = ResultRow::new(RowKind::Measurement, &r.benchmark, &r.config, r.thread_count);
        row.set("point", point);
        row.set("phase", r.phase);
        row.set("pass", r.pass);
        row.set("repetitions", r.repetitions);
        row.set_f64("wall_time", Some(r.wall_time));
        row.set_f64("energy", r.energy);
        row.set("run_index", r.run_index);
        row.set("timestamp", r.timestamp.to_rfc3339_opts(SecondsFormat::AutoSi, true));
        row.set("exit_status", r.exit_status);
        row.set_f64("inner_roi_seconds", r.inner_roi_seconds);
        for (k, &v) in &r.event_counts {
            row.set_f64(&format!("event:{k}"), Some(v));
        }
        for (k, v) in &r.dynamic_counts {
            row.set(&format!("dynamic:{k}"), v);
        }
        row
    }

    pub fn to_measurement(&self) -> Result<MeasurementRecord, OrchestratorError> {
        self.expect(RowKind::Measurement)?;
        let ts = self.require("timestamp")?;
        let timestamp = DateTime::parse_from_rfc3339(ts)
            .map_err(|e| schema(format!("timestamp `{ts}`: {e}")))?
            .with_timezone(&Utc);
        let pass: ProfilingPass = self.parse("pass")?;
        let phase: RunPhase = self.parse("phase")?;
        Ok(MeasurementRecord {
            benchmark: self.require("benchmark")?.to_string(),
            phase,
            pass,
            config: self.config()?,
            thread_count: self.thread_count()?,
            repetitions: self.parse("repetitions")?,
            wall_time: self.parse("wall_time")?,
            energy: self.f64("energy")?,
            event_counts: self.prefixed("event:")?,
            run_index: self.parse("run_index")?,
            timestamp,
            exit_status: self.parse("exit_status")?,
            inner_roi_seconds: self.f64("inner_roi_seconds")?,
            dynamic_counts: self
                .prefixed("dynamic:")?
                .into_iter()
                .map(|(k, v)| (k, v as u64))
                .collect(),
        })
    }

    pub fn from_denoised(m: &DenoisedMetrics, point: &str) -> Self {
        let mut row = ResultRow::new(RowKind::Denoised, &m.benchmark, &m.config, m.thread_count);
        row.set("denoised", "true");
        row.set("point", point);
        row.set_f64("full_time", Some(m.full_time));
        row.set_f64("setup_time", Some(m.setup_time));
        row.set_f64("roi_time", Some(m.roi_time));
        row.set_f64("roi_energy", m.roi_energy);
        row.set_f64("avg_power", m.avg_power);
        row.set_f64("ipc", m.ipc);
        row.set("calls", m.calls);
        row.set_f64("per_call_time", m.per_call_time);
        row.set_f64("per_call_energy", m.per_call_energy);
        for (k, &v) in &m.roi_events {
            row.set_f64(&format!("event:{k}"), Some(v));
        }
        for (k, &v) in &m.per_call_events {
            row.set_f64(&format!("per_call_event:{k}"), Some(v));
        }
        for (k, v) in &m.dynamic_counts {
            row.set(&format!("dynamic:{k}"), v);
        }
        row.set("warnings", m.warnings.join(" | "));
        row
    }

    pub fn to_denoised(&self) -> Result<DenoisedMetrics, OrchestratorError> {
        self.expect(RowKind::Denoised)?;
        Ok(DenoisedMetrics {
            benchmark: self.require("benchmark")?.to_string(),
            config: self.config()?,
            thread_count: self.thread_count()?,
            full_time: self.parse("full_time")?,
            setup_time: self.parse("setup_time")?,
            roi_time: self.parse("roi_time")?,
            roi_energy: self.f64("roi_energy")?,
            avg_power: self.f64("avg_power")?,
            ipc: self.f64("ipc")?,
            roi_events: self.prefixed("event:")?,
            per_call_time: self.f64("per_call_time")?,
            per_call_energy: self.f64("per_call_energy")?,
            per_call_events: self.prefixed("per_call_event:")?,
            calls: self.parse("calls")?,
            dynamic_counts: self
                .prefixed("dynamic:")?
                .into_iter()
                .map(|(k, v)| (k, v as u64))
                .collect(),
            warnings: self
                .get("warnings")
                .map(|w| w.split(" | ").map(str::to_string).collect())
                .unwrap_or_default(),
        })
    }

    /// A prediction row; `elapsed` is the wall time spent evaluating the model.
    pub fn from_prediction(p: &Prediction, source: &str, elapsed: f64) -> Self {
        let mut row = ResultRow::new(RowKind::Prediction, &p.benchmark, &p.key.config, p.key.thread_count);
        row.set("manifest_source", source);
        row.set_f64("total_time", Some(p.total_time));
        row.set_f64("total_energy", p.total_energy);
        row.set_f64("prediction_seconds", Some(elapsed));
        for (prim, c) in &p.contributions {
            row.set(&format!("count:{prim}"), c.count);
            row.set_f64(&format!("share:{prim}"), Some(c.time_share));
            row.set_f64(&format!("energy_share:{prim}"), c.energy_share);
        }
        row
    }

    pub fn from_validation(
        p: &Prediction,
        measured: &DenoisedMetrics,
        err: &SignedError,
        cosine: Option<(f64, &str)>,
    ) -> Self {
        let mut row = ResultRow::new(RowKind::Validation, &p.benchmark, &p.key.config, p.key.thread_count);
        row.set_f64("predicted_time", Some(p.total_time));
        row.set_f64("measured_time", Some(measured.roi_time));
        row.set_f64("predicted_energy", p.total_energy);
        row.set_f64("measured_energy", measured.roi_energy);
        row.set_f64("time_error", Some(err.time));
        row.set_f64("energy_error", err.energy);
        if let Some((c, source)) = cosine {
            row.set_f64("cosine", Some(c));
            row.set("cosine_source", source);
        }
        row
    }

    fn expect(&self, kind: RowKind) -> Result<(), OrchestratorError> {
        if self.kind != kind {
            return Err(schema(format!("expected a {kind} row, got {}", self.kind)));
        }
        Ok(())
    }
}

/// Row selection for [`ResultStore::load`].
#[derive(Debug, Clone, Default)]
pub struct RowFilter {
    pub benchmark: Option<String>,
    pub config: Option<CryptoConfig>,
    pub thread_count: Option<u32>,
}

impl RowFilter {
    pub fn benchmark(name: impl Into<String>) -> Self {
        RowFilter {
            benchmark: Some(name.into()),
            ..Default::default()
        }
    }

    fn matches(&self, row: &ResultRow) -> bool {
        if self.benchmark.as_deref().is_some_and(|b| b != row.benchmark()) {
            return false;
        }
        if let Some(c) = &self.config {
            if row.config().ok().as_ref() != Some(c) {
                return false;
            }
        }
        if let Some(t) = self.thread_count {
            if row.thread_count().ok() != Some(t) {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreManifest {
    format: String,
    schema_version: u32,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OrchestratorError + '_ {
    move |source| OrchestratorError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> OrchestratorError {
    OrchestratorError::Schema(format!("{}: {e}", path.display()))
}

pub struct ResultStore {
    root: PathBuf,
    writable: bool,
}

impl fmt::Debug for ResultStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ResultStore")
            .field("root", &self.root)
            .field("writable", &self.writable)
            .finish()
    }
}

fn pid_alive(pid: i32) -> bool {
    // SAFETY: signal 0 only probes for existence.
    let r = unsafe { libc::kill(pid, 0) };
    r == 0 || std::io::Error::last_os_error().raw_os_error() == Some(libc::EPERM)
}

impl ResultStore {
    /// Opens (creating if needed) the store at `root` for writing.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, OrchestratorError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        Self::check_manifest(&root, true)?;
        Self::acquire_lock(&root)?;
        Ok(ResultStore { root, writable: true })
    }

    /// Opens an existing store for reading only.
    pub fn open_read_only(root: impl Into<PathBuf>) -> Result<Self, OrchestratorError> {
        let root = root.into();
        Self::check_manifest(&root, false)?;
        Ok(ResultStore { root, writable: false })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn artifact_dir(&self, config: &CryptoConfig) -> PathBuf {
        self.root.join("artifacts").join(config.cache_key())
    }

    pub fn config_dir(&self) -> PathBuf {
        self.root.join("configs")
    }

    pub fn stack_dir(&self) -> PathBuf {
        self.root.join("stacks")
    }

    fn check_manifest(root: &Path, create: bool) -> Result<(), OrchestratorError> {
        let path = root.join(MANIFEST);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound && create => {
                let m = StoreManifest {
                    format: FORMAT.into(),
                    schema_version: SCHEMA_VERSION,
                };
                fs::write(&path, toml::to_string(&m).expect("manifest serializes")).map_err(io_err(&path))?;
                return Ok(());
            }
            Err(e) => return Err(io_err(&path)(e)),
        };
        let m: StoreManifest =
            toml::from_str(&text).map_err(|e| OrchestratorError::Schema(format!("{}: {e}", path.display())))?;
        if m.format != FORMAT {
            return Err(OrchestratorError::Schema(format!(
                "{} is not a results store (format `{}`)",
                root.display(),
                m.format
            )));
        }
        if m.schema_version != SCHEMA_VERSION {
            return Err(OrchestratorError::Migration {
                found: m.schema_version,
                supported: SCHEMA_VERSION,
            });
        }
        Ok(())
    }

    fn acquire_lock(root: &Path) -> Result<(), OrchestratorError> {
        let path = root.join(LOCK);
        for _ in 0..2 {
            match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    write!(f, "{}", std::process::id()).map_err(io_err(&path))?;
                    return Ok(());
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    let holder = fs::read_to_string(&path).unwrap_or_default();
                    match holder.trim().parse::<i32>() {
                        Ok(pid) if !pid_alive(pid) => {
                            warn!("removing stale store lock held by exited process {pid}");
                            let _ = fs::remove_file(&path);
                        }
                        _ => {
                            return Err(OrchestratorError::Lock {
                                path,
                                holder: holder.trim().to_string(),
                            })
                        }
                    }
                }
                Err(e) => return Err(io_err(&path)(e)),
            }
        }
        Err(OrchestratorError::Lock {
            path,
            holder: String::new(),
        })
    }

    fn read_file(&self, kind: RowKind) -> Result<(Vec<String>, Vec<ResultRow>), OrchestratorError> {
        let path = self.root.join(kind.file_name());
        if !path.exists() {
            return Ok((Vec::new(), Vec::new()));
        }
        let mut rdr = csv::Reader::from_path(&path).map_err(|e| csv_err(&path, e))?;
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| csv_err(&path, e))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_err(&path, e))?;
            let mut fields = BTreeMap::new();
            for (col, v) in header.iter().zip(rec.iter()) {
                if !v.is_empty() {
                    fields.insert(col.clone(), v.to_string());
                }
            }
            let row = ResultRow { kind, fields };
            if let Some(v) = row.get("schema_version") {
                let found: u32 = v
                    .parse()
                    .map_err(|_| OrchestratorError::Schema(format!("{}: bad schema_version `{v}`", path.display())))?;
                if found != SCHEMA_VERSION {
                    return Err(OrchestratorError::Migration {
                        found,
                        supported: SCHEMA_VERSION,
                    });
                }
            }
            rows.push(row);
        }
        Ok((header, rows))
    }

    fn ordered_header(columns: impl IntoIterator<Item = String>) -> Vec<String> {
        let mut rest: Vec<String> = columns.into_iter().filter(|c| !LEADING.contains(&c.as_str())).collect();
        rest.sort();
        rest.dedup();
        LEADING.iter().map(|s| s.to_string()).chain(rest).collect()
    }

    fn write_rows<'a>(
        path: &Path,
        header: &[String],
        rows: impl IntoIterator<Item = &'a ResultRow>,
        append: bool,
    ) -> Result<(), OrchestratorError> {
        let file = fs::OpenOptions::new()
            .create(true)
            .append(append)
            .write(true)
            .truncate(!append)
            .open(path)
            .map_err(io_err(path))?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if !append {
            w.write_record(header).map_err(|e| csv_err(path, e))?;
        }
        for row in rows {
            w.write_record(header.iter().map(|c| row.get(c).unwrap_or("")))
                .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(io_err(path))
    }

    /// Appends `rows`. A file whose header lacks some of the new columns is
    /// rewritten with the union header, preserving every existing value.
    pub fn persist(&mut self, rows: &[ResultRow]) -> Result<(), OrchestratorError> {
        if !self.writable {
            return Err(OrchestratorError::Schema("store opened read-only".into()));
        }
        for kind in RowKind::ALL {
            let batch: Vec<&ResultRow> = rows.iter().filter(|r| r.kind == kind).collect();
            if batch.is_empty() {
                continue;
            }
            let path = self.root.join(kind.file_name());
            let (header, existing) = self.read_file(kind)?;
            let fits = !header.is_empty() && batch.iter().all(|r| r.fields.keys().all(|k| header.contains(k)));
            if fits {
                Self::write_rows(&path, &header, batch, true)?;
            } else {
                let header = Self::ordered_header(
                    header
                        .into_iter()
                        .chain(batch.iter().flat_map(|r| r.fields.keys().cloned())),
                );
                let tmp = path.with_extension("csv.tmp");
                Self::write_rows(&tmp, &header, existing.iter().chain(batch), false)?;
                fs::rename(&tmp, &path).map_err(io_err(&path))?;
            }
        }
        Ok(())
    }

    /// Rows of `kind` matching `filter`, in insertion order.
    pub fn load(&self, kind: RowKind, filter: &RowFilter) -> Result<Vec<ResultRow>, OrchestratorError> {
        let (_, rows) = self.read_file(kind)?;
        Ok(rows.into_iter().filter(|r| filter.matches(r)).collect())
    }
}

impl Drop for ResultStore {
    fn drop(&mut self) {
        if self.writable {
            let _ = fs::remove_file(self.root.join(LOCK));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiler::test_support::record;

    fn sample() -> MeasurementRecord {
        let mut r = record(1.25);
        r.event_counts.insert("instructions".into(), 12345.0);
        r.dynamic_counts.insert("EvalAdd".into(), 7);
        r.inner_roi_seconds = Some(1.0 / 3.0);
        r
    }

    #[test]
    fn measurement_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ResultStore::open(dir.path()).unwrap();
        let row = ResultRow::from_measurement(&sample(), "p");
        store.persist(std::slice::from_ref(&row)).unwrap();
        let back = store
            .load(RowKind::Measurement, &RowFilter::benchmark("EvalAdd"))
            .unwrap();
        assert_eq!(back, vec![row]);
        assert_eq!(back[0].to_measurement().unwrap(), sample());
        assert!(store
            .load(RowKind::Measurement, &RowFilter::benchmark("EvalMult"))
            .unwrap()
            .is_empty());
        let f = RowFilter {
            thread_count: Some(2),
            ..Default::default()
        };
        assert!(store.load(RowKind::Measurement, &f).unwrap().is_empty());
    }

    #[test]
    fn denoised_round_trip() {
        let mut s = record(0.04);
        s.phase = RunPhase::Setup;
        let m = crate::denoise::derive(crate::denoise::denoise(&record(10.2), &s).unwrap());
        let m = crate::denoise::per_call(m, 3).unwrap();
        let row = ResultRow::from_denoised(&m, "p");
        assert_eq!(row.get("denoised"), Some("true"));
        let dir = tempfile::tempdir().unwrap();
        let mut store = ResultStore::open(dir.path()).unwrap();
        store.persist(&[row]).unwrap();
        let back = store.load(RowKind::Denoised, &RowFilter::default()).unwrap();
        assert_eq!(back[0].to_denoised().unwrap(), m);
    }

    #[test]
    fn second_writer_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let _a = ResultStore::open(dir.path()).unwrap();
        assert!(matches!(
            ResultStore::open(dir.path()),
            Err(OrchestratorError::Lock { .. })
        ));
        assert!(ResultStore::open_read_only(dir.path()).is_ok());
    }

    #[test]
    fn lock_released_on_drop_and_stale_lock_recovered() {
        let dir = tempfile::tempdir().unwrap();
        drop(ResultStore::open(dir.path()).unwrap());
        drop(ResultStore::open(dir.path()).unwrap());
        fs::write(dir.path().join(LOCK), "999999999").unwrap();
        assert!(ResultStore::open(dir.path()).is_ok());
    }

    #[test]
    fn schema_mismatch_names_versions() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join(MANIFEST),
            "format = \"fheprof-results\"\nschema_version = 9\n",
        )
        .unwrap();
        let err = ResultStore::open_read_only(dir.path()).unwrap_err();
        assert!(matches!(err, OrchestratorError::Migration { found: 9, supported: 1 }));
        assert!(err.to_string().contains('9') && err.to_string().contains('1'));
    }

    #[test]
    fn unknown_columns_survive_header_growth() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ResultStore::open(dir.path()).unwrap();
        let mut row = ResultRow::from_measurement(&record(1.0), "p");
        row.set("site", "lab-1");
        store.persist(&[row.clone()]).unwrap();
        let mut r2 = sample();
        r2.run_index = 1;
        let row2 = ResultRow::from_measurement(&r2, "p");
        store.persist(std::slice::from_ref(&row2)).unwrap();
        let back = store.load(RowKind::Measurement, &RowFilter::default()).unwrap();
        assert_eq!(back, vec![row, row2]);
    }

    #[test]
    fn appends_leave_existing_bytes_in_place() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ResultStore::open(dir.path()).unwrap();
        store
            .persist(&[ResultRow::from_measurement(&record(1.0), "p")])
            .unwrap();
        let before = fs::read(dir.path().join("measurement.csv")).unwrap();
        store
            .persist(&[ResultRow::from_measurement(&record(2.0), "p")])
            .unwrap();
        let after = fs::read(dir.path().join("measurement.csv")).unwrap();
        assert!(after.starts_with(&before));
        assert!(after.len() > before.len());
    }

    #[test]
    fn read_only_store_rejects_writes() {
        let dir = tempfile::tempdir().unwrap();
        drop(ResultStore::open(dir.path()).unwrap());
        let mut ro = ResultStore::open_read_only(dir.path()).unwrap();
        assert!(ro.persist(&[ResultRow::from_measurement(&record(1.0), "p")]).is_err());
    }
}
