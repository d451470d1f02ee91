//! Sequential plan execution.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use log::{info, warn};
use serde::Serialize;

use super::store::{ResultRow, ResultStore, RowFilter, RowKind};
use super::sweep::{PlanPoint, RunPlan};
use super::OrchestratorError;
use crate::denoise::{denoise, derive, per_call, DenoisedMetrics};
use crate::flamegraph::{ingest, parse_perf_script, render_svg, SvgOptions};
use crate::profiler::{aggregate_median, Measurement, MeasurementRecord, Profiler};
use crate::registry::{BenchmarkSpec, Registry};
use crate::runner::{build_invocation, compute_repetitions, RunPhase, RunnerConfig, RunnerInvocation};

const PREPARED_MARKER: &str = ".prepared";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointFailure {
    pub point: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ExecutionSummary {
    pub points_total: usize,
    pub points_completed: usize,
    /// Points skipped because the store already held their results.
    pub points_cached: usize,
    pub failures: Vec<PointFailure>,
    /// Executions of the profiled passes.
    pub measured_executions: u64,
    /// `runs × (1 + groups + stacks) × 2` summed over executed points.
    pub expected_measured_executions: u64,
    /// One-off artifact generation runs, outside any measurement.
    pub preparation_executions: u64,
    /// Pilot runs sizing primitive repetition counts.
    pub calibration_executions: u64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ExecutionSummary {
    pub fn all_cached(&self) -> bool {
        self.points_cached == self.points_total
    }

    pub fn total_executions(&self) -> u64 {
        self.measured_executions + self.preparation_executions + self.calibration_executions
    }

    pub fn render(&self) -> String {
        if self.all_cached() {
            return format!("all points cached ({} points, 0 executions)\n", self.points_total);
        }
        let mut s = format!(
            "{} points: {} completed, {} cached, {} failed\n\
             child executions: {} measured (expected {}), {} preparation, {} calibration\n",
            self.points_total,
            self.points_completed,
            self.points_cached,
            self.failures.len(),
            self.measured_executions,
            self.expected_measured_executions,
            self.preparation_executions,
            self.calibration_executions,
        );
        for f in &self.failures {
            s.push_str(&format!("FAILED {}: {}\n", f.point, f.reason));
        }
        s
    }
}

enum PointError {
    Failed(String),
    Fatal(OrchestratorError),
}

impl From<OrchestratorError> for PointError {
    fn from(e: OrchestratorError) -> Self {
        PointError::Fatal(e)
    }
}

fn failed(e: impl std::fmt::Display) -> PointError {
    PointError::Failed(e.to_string())
}

/// Executes `plan` point by point, persisting measurement rows and one
/// denoised row per completed point. Points whose denoised row is already
/// stored are skipped. A failing point is recorded and the plan continues;
/// store write failures abort.
pub fn execute_plan(
    plan: &RunPlan,
    registry: &Registry,
    profiler: &Profiler,
    store: &mut ResultStore,
) -> Result<ExecutionSummary, OrchestratorError> {
    let done: BTreeSet<String> = store
        .load(RowKind::Denoised, &RowFilter::default())?
        .iter()
        .filter_map(|r| r.get("point").map(str::to_string))
        .collect();
    let mut summary = ExecutionSummary {
        points_total: plan.points.len(),
        ..Default::default()
    };
    for point in &plan.points {
        let id = point.id();
        if done.contains(&id) {
            summary.points_cached += 1;
            continue;
        }
        info!("profiling {id}");
        summary.expected_measured_executions += plan.executions_per_point();
        let mut ctx = PointRun {
            plan,
            registry,
            profiler,
            point,
            id: &id,
            measured: 0,
            preparation: 0,
            calibration: 0,
            warnings: Vec::new(),
        };
        let result = ctx.run(store);
        summary.measured_executions += ctx.measured;
        summary.preparation_executions += ctx.preparation;
        summary.calibration_executions += ctx.calibration;
        summary.warnings.extend(ctx.warnings);
        match result {
            Ok(()) => summary.points_completed += 1,
            Err(PointError::Failed(reason)) => {
                warn!("{id} failed: {reason}");
                summary.failures.push(PointFailure { point: id, reason });
            }
            Err(PointError::Fatal(e)) => return Err(e),
        }
    }
    Ok(summary)
}

struct PointRun<'a> {
    plan: &'a RunPlan,
    registry: &'a Registry,
    profiler: &'a Profiler,
    point: &'a PlanPoint,
    id: &'a str,
    measured: u64,
    preparation: u64,
    calibration: u64,
    warnings: Vec<String>,
}

fn admitted(m: &Measurement, what: &str) -> Result<MeasurementRecord, PointError> {
    if m.records.is_empty() {
        let reason = m
            .failures
            .first()
            .map_or_else(|| "no runs".to_string(), |f| f.to_string());
        return Err(PointError::Failed(format!("{what}: {reason}")));
    }
    aggregate_median(&m.records).map_err(failed)
}

impl PointRun<'_> {
    fn run(&mut self, store: &mut ResultStore) -> Result<(), PointError> {
        let spec = self.registry.get(&self.point.benchmark).map_err(failed)?;
        let config = self.point.config;
        let threads = self.point.thread_count;

        let mut extra = spec.extra_params.clone();
        extra.extend(self.plan.extra_params.clone());
        let artifact_dir = store.artifact_dir(&config);
        let runner_config = RunnerConfig {
            benchmark: spec.name.clone(),
            crypto: config,
            extra_params: extra,
            artifact_dir: Some(artifact_dir.clone()),
        };
        let config_path = runner_config.write_into(&store.config_dir()).map_err(failed)?;
        let base = build_invocation(spec, &config, RunPhase::Setup, threads, 1, &config_path).map_err(failed)?;

        self.prepare_artifacts(&base, &artifact_dir)?;
        let reps = self.repetitions(spec, &base)?;
        let setup = RunnerInvocation {
            repetitions: reps,
            ..base
        };
        let full = setup.with_phase(RunPhase::Full);

        let runs = self.plan.runs_per_point;
        let mut rows = Vec::new();
        let mut pass = |me: &mut Self, inv: &RunnerInvocation, events| -> Result<MeasurementRecord, PointError> {
            let m = me.profiler.measure(inv, &config, events, runs).map_err(failed)?;
            me.measured += m.executions;
            rows.extend(m.records.iter().map(|r| ResultRow::from_measurement(r, me.id)));
            let agg = admitted(
                &m,
                &format!("{} {}", inv.phase, m.records.first().map_or("", |r| r.pass.as_str())),
            )?;
            rows.push(ResultRow::from_measurement(&agg, me.id));
            Ok(agg)
        };

        let setup_agg = pass(self, &setup, None)?;
        let full_agg = pass(self, &full, None)?;
        let mut metrics = denoise(&full_agg, &setup_agg).map_err(failed)?;

        let mut event_full_time = None;
        if let Some(events) = &self.plan.events {
            let es = pass(self, &setup, Some(events))?;
            let ef = pass(self, &full, Some(events))?;
            let ev = denoise(&ef, &es).map_err(failed)?;
            metrics.roi_events = ev.roi_events;
            metrics.warnings.extend(ev.warnings);
            event_full_time = Some(ef.wall_time);
        }

        if self.plan.record_stacks {
            self.stacks(store, &setup, &full, &mut rows)?;
        }

        let mut metrics = derive(metrics);
        if spec.is_primitive() {
            metrics = per_call(metrics, reps).map_err(failed)?;
        }
        self.warnings
            .extend(metrics.warnings.iter().map(|w| format!("{}: {w}", self.id)));
        let mut row = ResultRow::from_denoised(&metrics, self.id);
        if let Some(t) = event_full_time {
            row.set("event_full_time", format!("{t:?}"));
        }
        rows.push(row);
        store.persist(&rows)?;
        Ok(())
    }

    /// Generates the configuration's serialized artifacts once, in an
    /// unmeasured setup run, so measured setup phases only deserialize.
    fn prepare_artifacts(&mut self, base: &RunnerInvocation, dir: &Path) -> Result<(), PointError> {
        let marker = dir.join(PREPARED_MARKER);
        if marker.exists() {
            return Ok(());
        }
        fs::create_dir_all(dir).map_err(failed)?;
        let m = self
            .profiler
            .measure(base, &self.point.config, None, 1)
            .map_err(failed)?;
        self.preparation += m.executions;
        admitted(&m, "artifact preparation")?;
        fs::write(&marker, self.point.config.label()).map_err(failed)?;
        Ok(())
    }

    fn repetitions(&mut self, spec: &BenchmarkSpec, base: &RunnerInvocation) -> Result<u64, PointError> {
        if !spec.is_primitive() {
            return Ok(1);
        }
        if let Some(r) = self.plan.repetitions {
            return Ok(r);
        }
        let cfg = self.point.config;
        let pilot = self
            .profiler
            .measure(&base.with_phase(RunPhase::Full), &cfg, None, 1)
            .map_err(failed)?;
        self.calibration += pilot.executions;
        let full = admitted(&pilot, "calibration")?;
        let estimate = match full.inner_roi_seconds {
            Some(t) => t,
            None => {
                let s = self.profiler.measure(base, &cfg, None, 1).map_err(failed)?;
                self.calibration += s.executions;
                full.wall_time - admitted(&s, "calibration")?.wall_time
            }
        };
        // a pilot lost in timer noise still needs a finite count
        let reps = compute_repetitions(estimate.max(1e-6)).map_err(failed)?;
        info!("{}: {reps} repetitions (pilot {estimate:.3e} s/call)", self.id);
        Ok(reps)
    }

    fn stacks(
        &mut self,
        store: &ResultStore,
        setup: &RunnerInvocation,
        full: &RunnerInvocation,
        rows: &mut Vec<ResultRow>,
    ) -> Result<(), PointError> {
        let name = crate::runner::sanitize(self.id);
        let dir = store.stack_dir();
        let work = dir.join(format!("{name}.work"));
        let runs = self.plan.runs_per_point;
        let cfg = self.point.config;
        let mut dumps = Vec::new();
        for inv in [setup, full] {
            let m = self.profiler.record_stacks(inv, &cfg, runs, &work).map_err(failed)?;
            self.measured += m.executions;
            if m.records.is_empty() {
                let reason = m.failures.first().map_or_else(String::new, |f| f.to_string());
                return Err(PointError::Failed(format!("stack pass ({}): {reason}", inv.phase)));
            }
            rows.extend(m.records.iter().map(|r| ResultRow::from_measurement(r, self.id)));
            if inv.phase == RunPhase::Full {
                dumps = m.dumps;
            }
        }
        let _ = fs::remove_dir_all(&work);
        let mut samples = Vec::new();
        for d in &dumps {
            samples.extend(parse_perf_script(d).map_err(failed)?);
        }
        let profile = ingest(samples).map_err(failed)?;
        let svg = render_svg(&profile, self.id, &SvgOptions::default()).map_err(failed)?;
        fs::create_dir_all(&dir).map_err(failed)?;
        fs::write(dir.join(format!("{name}.folded")), profile.to_folded_text()).map_err(failed)?;
        fs::write(dir.join(format!("{name}.svg")), svg).map_err(failed)?;
        Ok(())
    }
}

/// Latest denoised metrics per plan point.
pub fn load_denoised(
    store: &ResultStore,
    filter: &RowFilter,
) -> Result<Vec<(String, DenoisedMetrics, ResultRow)>, OrchestratorError> {
    let mut latest: BTreeMap<String, (DenoisedMetrics, ResultRow)> = BTreeMap::new();
    for row in store.load(RowKind::Denoised, filter)? {
        let point = row.get("point").unwrap_or_default().to_string();
        latest.insert(point, (row.to_denoised()?, row));
    }
    Ok(latest.into_iter().map(|(p, (m, r))| (p, m, r)).collect())
}
