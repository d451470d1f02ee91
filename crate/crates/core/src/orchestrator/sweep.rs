//! Sweep specifications and run-plan generation.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::OrchestratorError;
use crate::profiler::{EventSet, DEFAULT_COUNTER_BUDGET, DEFAULT_EVENTS};
use crate::registry::{AbstractionLevel, ConfigOverrides, CryptoConfig, Registry, SecurityStandard};

pub const DEFAULT_RUNS_PER_POINT: u32 = 5;

/// Events requested by a sweep. An empty name list selects the default
/// catalog.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    #[serde(default)]
    pub names: Vec<String>,
    #[serde(default = "default_budget")]
    pub budget: usize,
}

fn default_budget() -> usize {
    DEFAULT_COUNTER_BUDGET
}

fn default_runs() -> u32 {
    DEFAULT_RUNS_PER_POINT
}

fn default_security() -> Vec<SecurityStandard> {
    vec![SecurityStandard::None]
}

fn default_threads() -> Vec<u32> {
    vec![1]
}

/// A combinatorial sweep. Omitted ring-dimension, depth and batch lists fall
/// back to each benchmark's default value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub benchmarks: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log2_ring_dims: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depths: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_sizes: Option<Vec<u64>>,
    #[serde(default = "default_security")]
    pub security_standards: Vec<SecurityStandard>,
    #[serde(default = "default_threads")]
    pub thread_counts: Vec<u32>,
    #[serde(default = "default_runs")]
    pub runs_per_point: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events: Option<EventSpec>,
    #[serde(default)]
    pub record_stacks: bool,
    /// Fixed primitive repetition count; calibrated to the 500 ms rule when
    /// absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repetitions: Option<u64>,
    /// Merged into every runner configuration document.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra_params: BTreeMap<String, serde_json::Value>,
}

impl SweepSpec {
    pub fn new<I, S>(benchmarks: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        SweepSpec {
            benchmarks: benchmarks.into_iter().map(Into::into).collect(),
            log2_ring_dims: None,
            depths: None,
            batch_sizes: None,
            security_standards: default_security(),
            thread_counts: default_threads(),
            runs_per_point: DEFAULT_RUNS_PER_POINT,
            events: None,
            record_stacks: false,
            repetitions: None,
            extra_params: BTreeMap::new(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, OrchestratorError> {
        toml::from_str(text).map_err(|e| OrchestratorError::Spec(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, OrchestratorError> {
        let text = std::fs::read_to_string(path).map_err(|e| OrchestratorError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text).map_err(|e| OrchestratorError::Spec(format!("{}: {e}", path.display())))
    }

    pub fn check(&self) -> Result<(), OrchestratorError> {
        let bad = |m: &str| Err(OrchestratorError::Spec(m.to_string()));
        if self.benchmarks.is_empty() {
            return bad("benchmarks must not be empty");
        }
        if self.log2_ring_dims.as_ref().is_some_and(Vec::is_empty) {
            return bad("log2_ring_dims must not be empty");
        }
        if self.depths.as_ref().is_some_and(Vec::is_empty) {
            return bad("depths must not be empty");
        }
        if self.batch_sizes.as_ref().is_some_and(Vec::is_empty) {
            return bad("batch_sizes must not be empty");
        }
        if self.security_standards.is_empty() {
            return bad("security_standards must not be empty");
        }
        if self.thread_counts.is_empty() || self.thread_counts.contains(&0) {
            return bad("thread_counts must be non-empty and positive");
        }
        if self.runs_per_point < 1 {
            return bad("runs_per_point must be at least 1");
        }
        if self.repetitions == Some(0) {
            return bad("repetitions must be at least 1");
        }
        Ok(())
    }

    fn event_set(&self) -> Result<Option<EventSet>, OrchestratorError> {
        let Some(spec) = &self.events else {
            return Ok(None);
        };
        let set = if spec.names.is_empty() {
            EventSet::new(DEFAULT_EVENTS.iter().flat_map(|(_, e)| e.iter().copied()), spec.budget)
        } else {
            EventSet::new(spec.names.iter().cloned(), spec.budget)
        };
        set.map(Some).map_err(|e| OrchestratorError::Spec(e.to_string()))
    }
}

/// One (benchmark, configuration, threads) measurement point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanPoint {
    pub benchmark: String,
    pub level: AbstractionLevel,
    pub config: CryptoConfig,
    pub thread_count: u32,
}

impl PlanPoint {
    /// Stable identifier used for resumption.
    pub fn id(&self) -> String {
        point_id(&self.benchmark, &self.config, self.thread_count)
    }

    fn sort_key(&self) -> (AbstractionLevel, &str, u32, u32, u64, SecurityStandard, u32) {
        (
            self.level,
            &self.benchmark,
            self.config.log2_ring_dim,
            self.config.depth,
            self.config.batch_size,
            self.config.security_standard,
            self.thread_count,
        )
    }
}

pub fn point_id(benchmark: &str, config: &CryptoConfig, threads: u32) -> String {
    format!("{benchmark}@{}-t{threads}", config.label())
}

/// A sweep combination that was not planned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedPoint {
    pub benchmark: String,
    pub requested: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPlan {
    pub points: Vec<PlanPoint>,
    pub runs_per_point: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events: Option<EventSet>,
    pub record_stacks: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repetitions: Option<u64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra_params: BTreeMap<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped: Vec<DroppedPoint>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl RunPlan {
    /// Profiled child executions per point: `runs × (1 + groups + stacks) × 2`.
    pub fn executions_per_point(&self) -> u64 {
        let groups = self.events.as_ref().map_or(0, |e| e.group_count()) as u64;
        self.runs_per_point as u64 * (1 + groups + self.record_stacks as u64) * 2
    }

    pub fn expected_executions(&self) -> u64 {
        self.points.len() as u64 * self.executions_per_point()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, OrchestratorError> {
        serde_json::from_str(text).map_err(|e| OrchestratorError::Spec(format!("run plan: {e}")))
    }
}

/// Expands `spec` into an ordered plan: primitives first, then
/// microbenchmarks, then workloads, each by name, N, L, batch, security
/// standard and thread count. Combinations failing validation are dropped
/// with a reason; combinations that resolve to an already planned point are
/// merged.
pub fn generate_sweep(spec: &SweepSpec, registry: &Registry) -> Result<RunPlan, OrchestratorError> {
    spec.check()?;
    let events = spec.event_set()?;
    fn each<T: Copy>(v: &Option<Vec<T>>) -> Vec<Option<T>> {
        v.as_ref().map_or(vec![None], |v| v.iter().copied().map(Some).collect())
    }
    let mut points: BTreeMap<String, PlanPoint> = BTreeMap::new();
    let mut dropped = Vec::new();
    let mut warnings = Vec::new();

    for name in &spec.benchmarks {
        let bench = registry.get(name)?;
        let dflt = bench.default_config;
        let ring_dims: Vec<Option<u32>> = each(&spec.log2_ring_dims);
        let depths: Vec<Option<u32>> = each(&spec.depths);
        let batches: Vec<Option<u64>> = each(&spec.batch_sizes);
        for &n in &ring_dims {
            for &l in &depths {
                for &b in &batches {
                    for &sec in &spec.security_standards {
                        let ov = ConfigOverrides {
                            log2_ring_dim: n,
                            depth: l,
                            batch_size: b,
                            security_standard: Some(sec),
                        };
                        let requested = ov.apply(dflt);
                        let resolved = match registry.resolve_config(bench, &ov) {
                            Ok(r) => r,
                            Err(e) => {
                                warn!("dropping {name} at {}: {e}", requested.label());
                                dropped.push(DroppedPoint {
                                    benchmark: name.clone(),
                                    requested: requested.label(),
                                    reason: e.to_string(),
                                });
                                continue;
                            }
                        };
                        warnings.extend(resolved.warnings);
                        for &t in &spec.thread_counts {
                            let p = PlanPoint {
                                benchmark: bench.name.clone(),
                                level: bench.level,
                                config: resolved.config,
                                thread_count: t,
                            };
                            points.entry(p.id()).or_insert(p);
                        }
                    }
                }
            }
        }
    }
    if points.is_empty() {
        return Err(OrchestratorError::EmptyPlan(
            dropped
                .iter()
                .map(|d| format!("{} {}: {}", d.benchmark, d.requested, d.reason))
                .collect(),
        ));
    }
    let mut points: Vec<PlanPoint> = points.into_values().collect();
    points.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    warnings.sort();
    warnings.dedup();
    Ok(RunPlan {
        points,
        runs_per_point: spec.runs_per_point,
        events,
        record_stacks: spec.record_stacks,
        repetitions: spec.repetitions,
        extra_params: spec.extra_params.clone(),
        dropped,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cartesian_count() {
        let reg = Registry::builtin();
        let mut spec = SweepSpec::new(["EvalAdd"]);
        spec.log2_ring_dims = Some((13..=17).collect());
        spec.depths = Some((1..=11).collect());
        let plan = generate_sweep(&spec, &reg).unwrap();
        assert_eq!(plan.points.len(), 55);
        assert!(plan.dropped.is_empty());
        assert_eq!(plan.executions_per_point(), 10);
    }

    #[test]
    fn oversized_batch_is_dropped() {
        let reg = Registry::builtin();
        let mut spec = SweepSpec::new(["EvalAdd"]);
        spec.log2_ring_dims = Some(vec![13, 14]);
        spec.batch_sizes = Some(vec![8192]);
        let plan = generate_sweep(&spec, &reg).unwrap();
        assert_eq!(plan.points.len(), 1);
        assert_eq!(plan.points[0].config.log2_ring_dim, 14);
        assert_eq!(plan.dropped.len(), 1);
        assert!(plan.dropped[0].reason.contains("N/2"), "{}", plan.dropped[0].reason);
    }

    #[test]
    fn nothing_valid_is_an_error() {
        let reg = Registry::builtin();
        let mut spec = SweepSpec::new(["EvalAdd"]);
        spec.batch_sizes = Some(vec![3]);
        assert!(matches!(
            generate_sweep(&spec, &reg),
            Err(OrchestratorError::EmptyPlan(_))
        ));
    }

    #[test]
    fn levels_are_ordered() {
        let reg = Registry::builtin();
        let mut spec = SweepSpec::new(["resnet20", "matrix-mult-32", "EvalAdd"]);
        spec.thread_counts = vec![8, 1];
        let plan = generate_sweep(&spec, &reg).unwrap();
        let names: Vec<_> = plan
            .points
            .iter()
            .map(|p| (p.benchmark.as_str(), p.thread_count))
            .collect();
        assert_eq!(
            names,
            [
                ("EvalAdd", 1),
                ("EvalAdd", 8),
                ("matrix-mult-32", 1),
                ("matrix-mult-32", 8),
                ("resnet20", 1),
                ("resnet20", 8)
            ]
        );
    }

    #[test]
    fn security_raise_merges_points() {
        let reg = Registry::builtin();
        let mut spec = SweepSpec::new(["EvalAdd"]);
        spec.log2_ring_dims = Some(vec![13, 14, 15]);
        spec.depths = Some(vec![10]);
        spec.security_standards = vec![SecurityStandard::Bits128];
        let plan = generate_sweep(&spec, &reg).unwrap();
        assert_eq!(plan.points.len(), 1);
        assert_eq!(plan.points[0].config.log2_ring_dim, 15);
        assert_eq!(plan.warnings.len(), 2);
    }

    #[test]
    fn plan_serialization_is_stable() {
        let reg = Registry::builtin();
        let text =
            "benchmarks = [\"EvalMult\", \"EvalAdd\"]\nlog2_ring_dims = [14, 13]\nthread_counts = [4, 1]\n[events]\n";
        let spec = SweepSpec::parse(text).unwrap();
        let a = generate_sweep(&spec, &reg).unwrap().to_json();
        let b = generate_sweep(&SweepSpec::parse(text).unwrap(), &reg)
            .unwrap()
            .to_json();
        assert_eq!(a, b);
        let plan = RunPlan::from_json(&a).unwrap();
        assert_eq!(plan.to_json(), a);
        assert_eq!(plan.events.as_ref().unwrap().group_count(), 4);
        assert_eq!(plan.executions_per_point(), 50);
    }

    #[test]
    fn spec_errors() {
        assert!(SweepSpec::parse("benchmarks = []").unwrap().check().is_err());
        assert!(SweepSpec::parse("benchmarks = [\"x\"]\nthread_counts = [0]")
            .unwrap()
            .check()
            .is_err());
        assert!(SweepSpec::parse("benchmarks = [\"x\"]\nruns_per_point = 0")
            .unwrap()
            .check()
            .is_err());
        assert!(SweepSpec::parse("benchmarks = [\"x\"]\nbogus = 1").is_err());
        let reg = Registry::builtin();
        assert!(matches!(
            generate_sweep(&SweepSpec::new(["nope"]), &reg),
            Err(OrchestratorError::Registry(_))
        ));
    }
}
