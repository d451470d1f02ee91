//! Executes runner invocations under measurement.
//!
//! Every child execution is timed with a monotonic clock and bracketed by two
//! reads of the package energy counter. Performance events are split into
//! groups that fit the host's counter budget; each group costs one extra
//! child execution per run, and the groups of one run index are merged into a
//! single record. Counts are never scaled from multiplexed readings.

mod child;
mod energy;
mod events;
mod stacks;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use chrono::{DateTime, Utc};
use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use child::{run_child, ChildOutcome};
pub use energy::{energy_delta, EnergyMeter, RaplPackage};
pub use events::{
    AttachedCounters, CounterBackend, EventSet, PerfEventBackend, DEFAULT_COUNTER_BUDGET, DEFAULT_EVENTS,
};
pub use stacks::{PerfRecord, StackRecorder, DEFAULT_SAMPLE_HZ};

use crate::registry::CryptoConfig;
use crate::runner::{parse_self_report, RunPhase, RunnerInvocation, SelfReport};
use crate::stats::median;

/// `run_index` of a record produced by [`aggregate_median`].
pub const AGGREGATE_RUN_INDEX: i64 = -1;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("unsupported on this host: {0}")]
    Capability(String),
    #[error("performance counters: {0}")]
    Counter(String),
    #[error("failed to run child: {0}")]
    Spawn(#[source] std::io::Error),
}

/// Which profiling pass produced a measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfilingPass {
    /// Wall time and energy only.
    Runtime,
    /// Performance-counter groups.
    Events,
    /// Call-stack sampling.
    Stacks,
}

impl ProfilingPass {
    pub fn as_str(self) -> &'static str {
        match self {
            ProfilingPass::Runtime => "runtime",
            ProfilingPass::Events => "events",
            ProfilingPass::Stacks => "stacks",
        }
    }
}

impl fmt::Display for ProfilingPass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ProfilingPass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "runtime" => Ok(ProfilingPass::Runtime),
            "events" => Ok(ProfilingPass::Events),
            "stacks" => Ok(ProfilingPass::Stacks),
            other => Err(format!("unknown profiling pass `{other}`")),
        }
    }
}

/// One profiled process execution (or the median of several).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub benchmark: String,
    pub phase: RunPhase,
    pub pass: ProfilingPass,
    pub config: CryptoConfig,
    pub thread_count: u32,
    /// Repetitions the runner executed inside the region of interest.
    pub repetitions: u64,
    /// Seconds.
    pub wall_time: f64,
    /// Package-domain joules; `None` when the energy interface was unreadable.
    pub energy: Option<f64>,
    pub event_counts: BTreeMap<String, f64>,
    pub run_index: i64,
    pub timestamp: DateTime<Utc>,
    pub exit_status: i32,
    /// The benchmark's own timing of its region of interest, if reported.
    pub inner_roi_seconds: Option<f64>,
    /// Operation counts the runner reported for its region of interest.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub dynamic_counts: BTreeMap<String, u64>,
}

impl MeasurementRecord {
    fn same_point(&self, other: &MeasurementRecord) -> bool {
        self.benchmark == other.benchmark
            && self.phase == other.phase
            && self.config == other.config
            && self.thread_count == other.thread_count
    }
}

/// An execution that did not yield an admitted record.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub run_index: u32,
    pub group: usize,
    pub attempts: u32,
    pub exit_status: Option<i32>,
    pub reason: String,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "run {} (group {}) failed after {} attempt(s)",
            self.run_index, self.group, self.attempts
        )?;
        if let Some(s) = self.exit_status {
            write!(f, " with exit status {s}")?;
        }
        write!(f, ": {}", self.reason)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Measurement {
    /// Admitted records, one per successful run index.
    pub records: Vec<MeasurementRecord>,
    pub failures: Vec<RunFailure>,
    /// Child processes started, retries included.
    pub executions: u64,
}

#[derive(Debug, Clone, Default)]
pub struct StackMeasurement {
    pub records: Vec<MeasurementRecord>,
    pub failures: Vec<RunFailure>,
    pub executions: u64,
    /// One textual stack dump per admitted run.
    pub dumps: Vec<String>,
}

/// Measurement driver. One measurement is in flight at a time.
pub struct Profiler {
    counters: Box<dyn CounterBackend>,
    energy: Option<Box<dyn EnergyMeter>>,
    stacks: Box<dyn StackRecorder>,
    retries: u32,
    executions: AtomicU64,
}

impl Default for Profiler {
    fn default() -> Self {
        Profiler::new()
    }
}

impl Profiler {
    /// Native counters, RAPL when present, `perf record` for stacks.
    pub fn new() -> Self {
        let energy: Option<Box<dyn EnergyMeter>> = match RaplPackage::discover() {
            Ok(m) => Some(Box::new(m)),
            Err(e) => {
                log::info!("energy measurement disabled: {e}");
                None
            }
        };
        Profiler {
            counters: Box::new(PerfEventBackend),
            energy,
            stacks: Box::new(PerfRecord::default()),
            retries: 1,
            executions: AtomicU64::new(0),
        }
    }

    pub fn with_counters(mut self, backend: impl CounterBackend + 'static) -> Self {
        self.counters = Box::new(backend);
        self
    }

    pub fn with_energy(mut self, meter: Option<Box<dyn EnergyMeter>>) -> Self {
        self.energy = meter;
        self
    }

    pub fn with_stack_recorder(mut self, recorder: impl StackRecorder + 'static) -> Self {
        self.stacks = Box::new(recorder);
        self
    }

    /// Extra attempts granted to a failed execution.
    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    pub fn has_energy(&self) -> bool {
        self.energy.is_some()
    }

    /// Child processes started by this profiler so far.
    pub fn executions(&self) -> u64 {
        self.executions.load(Ordering::Relaxed)
    }

    fn check(inv: &RunnerInvocation, out: &ChildOutcome) -> Result<SelfReport, String> {
        if out.exit_status != 0 {
            let tail = String::from_utf8_lossy(&out.stderr);
            let tail = tail.trim();
            let tail = &tail[tail.len().saturating_sub(400)..];
            return Err(format!("child exited with status {}: {tail}", out.exit_status));
        }
        let report = parse_self_report(&out.stdout).map_err(|e| e.to_string())?;
        if report.benchmark != inv.benchmark || report.phase != inv.phase {
            return Err(format!(
                "self-report is for {} ({}), expected {} ({})",
                report.benchmark, report.phase, inv.benchmark, inv.phase
            ));
        }
        if report.repetitions_executed != inv.repetitions {
            return Err(format!(
                "runner executed {} repetitions, {} requested",
                report.repetitions_executed, inv.repetitions
            ));
        }
        Ok(report)
    }

    /// Runs one execution with retries; returns the outcome and self-report
    /// of the first successful attempt.
    fn attempt<F>(
        &self,
        inv: &RunnerInvocation,
        run: u32,
        group: usize,
        mut exec: F,
    ) -> Result<Result<(ChildOutcome, SelfReport), RunFailure>, ProfileError>
    where
        F: FnMut() -> Result<ChildOutcome, ProfileError>,
    {
        let mut last = None;
        for attempt in 1..=self.retries + 1 {
            self.executions.fetch_add(1, Ordering::Relaxed);
            let outcome = match exec() {
                Ok(o) => o,
                Err(ProfileError::Spawn(e)) => {
                    last = Some(RunFailure {
                        run_index: run,
                        group,
                        attempts: attempt,
                        exit_status: None,
                        reason: format!("spawn failed: {e}"),
                    });
                    continue;
                }
                Err(e) => return Err(e),
            };
            match Self::check(inv, &outcome) {
                Ok(report) => return Ok(Ok((outcome, report))),
                Err(reason) => {
                    warn!("{} {} run {run}: {reason}", inv.benchmark, inv.phase);
                    last = Some(RunFailure {
                        run_index: run,
                        group,
                        attempts: attempt,
                        exit_status: Some(outcome.exit_status),
                        reason,
                    });
                }
            }
        }
        Ok(Err(last.expect("at least one attempt")))
    }

    fn record(
        inv: &RunnerInvocation,
        config: &CryptoConfig,
        pass: ProfilingPass,
        run: u32,
        out: &ChildOutcome,
        report: &SelfReport,
    ) -> MeasurementRecord {
        MeasurementRecord {
            benchmark: inv.benchmark.clone(),
            phase: inv.phase,
            pass,
            config: *config,
            thread_count: inv.thread_count,
            repetitions: report.repetitions_executed,
            wall_time: out.wall_time,
            energy: out.energy,
            event_counts: out.counts.iter().map(|(k, &v)| (k.clone(), v as f64)).collect(),
            run_index: run as i64,
            timestamp: Utc::now(),
            exit_status: out.exit_status,
            inner_roi_seconds: report.inner_roi_seconds,
            dynamic_counts: report.dynamic_counts.clone().unwrap_or_default(),
        }
    }

    /// Executes `inv` `runs` times per event group.
    ///
    /// Without events each run is one execution. With `g` groups the child
    /// runs `runs × g` times; the group executions of one run index are
    /// merged, time and energy coming from the first group's execution. A
    /// run index with any failed group is excluded and reported.
    pub fn measure(
        &self,
        inv: &RunnerInvocation,
        config: &CryptoConfig,
        events: Option<&EventSet>,
        runs: u32,
    ) -> Result<Measurement, ProfileError> {
        if runs < 1 {
            return Err(ProfileError::Argument("runs must be at least 1".into()));
        }
        let before = self.executions();
        let (pass, groups): (ProfilingPass, Vec<&[String]>) = match events {
            None => (ProfilingPass::Runtime, vec![&[]]),
            Some(set) => (ProfilingPass::Events, set.groups.iter().map(|g| g.as_slice()).collect()),
        };
        let mut out = Measurement::default();
        for run in 0..runs {
            let mut merged: Option<MeasurementRecord> = None;
            let mut failed = false;
            for (gi, group) in groups.iter().enumerate() {
                let res = self.attempt(inv, run, gi, || {
                    run_child(inv.command(), group, self.counters.as_ref(), self.energy.as_deref())
                })?;
                match res {
                    Ok((outcome, report)) => {
                        let rec = Self::record(inv, config, pass, run, &outcome, &report);
                        match merged.as_mut() {
                            None => merged = Some(rec),
                            Some(m) => m.event_counts.extend(rec.event_counts),
                        }
                    }
                    Err(f) => {
                        out.failures.push(f);
                        failed = true;
                        break;
                    }
                }
            }
            if let (false, Some(m)) = (failed, merged) {
                out.records.push(m);
            }
        }
        out.executions = self.executions() - before;
        Ok(out)
    }

    /// Runs `inv` under the stack recorder `runs` times.
    pub fn record_stacks(
        &self,
        inv: &RunnerInvocation,
        config: &CryptoConfig,
        runs: u32,
        workdir: &Path,
    ) -> Result<StackMeasurement, ProfileError> {
        if runs < 1 {
            return Err(ProfileError::Argument("runs must be at least 1".into()));
        }
        let before = self.executions();
        let mut out = StackMeasurement::default();
        for run in 0..runs {
            let mut dump = String::new();
            let res = self.attempt(inv, run, 0, || {
                let (o, d) = self.stacks.record(inv.command(), workdir)?;
                dump = d;
                Ok(o)
            })?;
            match res {
                Ok((outcome, report)) => {
                    out.records
                        .push(Self::record(inv, config, ProfilingPass::Stacks, run, &outcome, &report));
                    out.dumps.push(std::mem::take(&mut dump));
                }
                Err(f) => out.failures.push(f),
            }
        }
        out.executions = self.executions() - before;
        Ok(out)
    }
}

/// Field-wise median of homogeneous admitted records.
///
/// Wall time, energy and every event count are aggregated independently;
/// energy is absent if any input lacks it. The result carries
/// [`AGGREGATE_RUN_INDEX`].
pub fn aggregate_median(records: &[MeasurementRecord]) -> Result<MeasurementRecord, ProfileError> {
    let first = records
        .first()
        .ok_or_else(|| ProfileError::Argument("no records to aggregate".into()))?;
    if let Some(r) = records.iter().find(|r| !r.same_point(first)) {
        return Err(ProfileError::Argument(format!(
            "heterogeneous records: {} {} {} t={} vs {} {} {} t={}",
            first.benchmark,
            first.phase,
            first.config,
            first.thread_count,
            r.benchmark,
            r.phase,
            r.config,
            r.thread_count
        )));
    }
    if let Some(r) = records.iter().find(|r| r.exit_status != 0) {
        return Err(ProfileError::Argument(format!(
            "run {} exited with status {} and cannot be aggregated",
            r.run_index, r.exit_status
        )));
    }
    let col = |f: &dyn Fn(&MeasurementRecord) -> Option<f64>| -> Option<f64> {
        let v: Option<Vec<f64>> = records.iter().map(f).collect();
        v.and_then(|v| median(&v))
    };
    let mut names: Vec<&String> = records.iter().flat_map(|r| r.event_counts.keys()).collect();
    names.sort();
    names.dedup();
    let mut event_counts = BTreeMap::new();
    for name in names {
        let v: Vec<f64> = records
            .iter()
            .filter_map(|r| r.event_counts.get(name).copied())
            .collect();
        if v.len() != records.len() {
            warn!(
                "event {name} missing from some runs; median over {} of {}",
                v.len(),
                records.len()
            );
        }
        if let Some(m) = median(&v) {
            event_counts.insert(name.clone(), m);
        }
    }
    Ok(MeasurementRecord {
        benchmark: first.benchmark.clone(),
        phase: first.phase,
        pass: first.pass,
        config: first.config,
        thread_count: first.thread_count,
        repetitions: first.repetitions,
        wall_time: col(&|r| Some(r.wall_time)).expect("wall times are finite"),
        energy: col(&|r| r.energy),
        event_counts,
        run_index: AGGREGATE_RUN_INDEX,
        timestamp: records.iter().map(|r| r.timestamp).max().unwrap_or(first.timestamp),
        exit_status: 0,
        inner_roi_seconds: col(&|r| r.inner_roi_seconds),
        dynamic_counts: first.dynamic_counts.clone(),
    })
}


#[cfg(test)]
mod tests {
    use super::test_support::record;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn median_of_wall_times() {
        let recs: Vec<_> = [1.0, 2.0, 3.0, 4.0, 100.0].iter().map(|&w| record(w)).collect();
        let m = aggregate_median(&recs).unwrap();
        assert_eq!(m.wall_time, 3.0);
        assert_eq!(m.energy, Some(30.0));
        assert_eq!(m.run_index, AGGREGATE_RUN_INDEX);
    }

    #[test]
    fn even_count_midpoint() {
        let m = aggregate_median(&[record(2.0), record(4.0)]).unwrap();
        assert_eq!(m.wall_time, 3.0);
    }

    #[test]
    fn single_record_is_identity_up_to_run_index() {
        let r = record(1.25);
        let m = aggregate_median(std::slice::from_ref(&r)).unwrap();
        assert_eq!(
            MeasurementRecord {
                run_index: r.run_index,
                ..m
            },
            r
        );
    }

    #[test]
    fn heterogeneous_records_are_rejected() {
        let mut b = record(1.0);
        b.thread_count = 2;
        assert!(matches!(
            aggregate_median(&[record(1.0), b]),
            Err(ProfileError::Argument(_))
        ));
        assert!(aggregate_median(&[]).is_err());
    }

    #[test]
    fn absent_energy_stays_absent() {
        let mut b = record(2.0);
        b.energy = None;
        assert_eq!(aggregate_median(&[record(1.0), b]).unwrap().energy, None);
    }

    #[test]
    fn events_aggregate_per_name() {
        let mk = |w: f64, i: f64| {
            let mut r = record(w);
            r.event_counts.insert("instructions".into(), i);
            r
        };
        let m = aggregate_median(&[mk(1.0, 10.0), mk(1.0, 30.0), mk(1.0, 20.0)]).unwrap();
        assert_eq!(m.event_counts["instructions"], 20.0);
    }

    proptest! {
        #[test]
        fn aggregation_is_permutation_invariant(
            walls in prop::collection::vec(0.001f64..100.0, 1..9),
            rot in 0usize..9,
        ) {
            let recs: Vec<_> = walls.iter().map(|&w| record(w)).collect();
            let mut rotated = recs.clone();
            let k = rot % rotated.len();
            rotated.rotate_left(k);
            rotated.reverse();
            let a = aggregate_median(&recs).unwrap();
            let b = aggregate_median(&rotated).unwrap();
            prop_assert_eq!(a.wall_time, b.wall_time);
            prop_assert_eq!(a.energy, b.energy);
        }
    }
}
