//! Hardware-free benchmark backend.
//!
//! A synthetic run busy-spins for the time its cost model assigns to the
//! benchmark's operations, so wall time, energy and PMU counts all scale with
//! the modelled work. The model is
//!
//! ```text
//! t = Σ_p count_p · base_p · (N / 2^16)^α · (L / 10)^β / min(threads, saturation)
//! ```
//!
//! with an optional per-primitive multiplicative noise draw in
//! `[-noise, +noise]` for each execution.

use std::collections::BTreeMap;
use std::hint::black_box;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::protocol::{RunPhase, RunnerConfig, RunnerInvocation, SelfReport};
use super::ProtocolError;
use crate::registry::{CryptoConfig, OpCountManifest, Registry};

/// Extra-parameter key carrying an inline [`SyntheticCostModel`].
pub const MODEL_PARAM: &str = "synthetic_model";
/// Extra-parameter key carrying an inline manifest (`{primitive: count}`)
/// that replaces the registry manifest of a composite benchmark.
pub const MANIFEST_PARAM: &str = "synthetic_manifest";

const REFERENCE_LOG2_RING_DIM: i32 = 16;
const REFERENCE_DEPTH: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCostModel {
    /// Seconds per call at N = 2^16, L = 10, one thread.
    pub base_costs: BTreeMap<String, f64>,
    #[serde(default = "default_exponent")]
    pub ring_exponent: f64,
    #[serde(default = "default_exponent")]
    pub depth_exponent: f64,
    #[serde(default = "default_saturation")]
    pub saturation: u32,
    #[serde(default)]
    pub noise: f64,
    /// Fixed cost of the initialization (deserialization) step.
    #[serde(default = "default_setup")]
    pub setup_seconds: f64,
    /// Noise seed; unseeded models draw fresh noise on every execution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_exponent() -> f64 {
    1.0
}

fn default_saturation() -> u32 {
    8
}

fn default_setup() -> f64 {
    0.02
}

impl Default for SyntheticCostModel {
    fn default() -> Self {
        let ms = 1e-3;
        let base_costs = [
            ("EvalAdd", 0.15 * ms),
            ("EvalAdd(Plaintext)", 0.12 * ms),
            ("EvalSub", 0.15 * ms),
            ("EvalSub(Scalar)", 0.08 * ms),
            ("EvalMult", 3.0 * ms),
            ("EvalMultNoRelin", 1.2 * ms),
            ("EvalMult(Plaintext)", 0.6 * ms),
            ("EvalMult(Scalar)", 0.3 * ms),
            ("EvalSquare", 2.6 * ms),
            ("EvalRotate", 2.4 * ms),
            ("EvalFastRotate", 1.1 * ms),
            ("EvalBootstrap", 250.0 * ms),
            ("EvalChebyshevFunction", 60.0 * ms),
            ("EvalChebyshevSeries", 55.0 * ms),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        SyntheticCostModel {
            base_costs,
            ring_exponent: 1.0,
            depth_exponent: 1.0,
            saturation: 8,
            noise: 0.0,
            setup_seconds: default_setup(),
            seed: None,
        }
    }
}

impl SyntheticCostModel {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        let bad = |m: String| Err(ProtocolError::Argument(m));
        if let Some((k, v)) = self.base_costs.iter().find(|(_, &v)| !(v > 0.0)) {
            return bad(format!("base cost of {k} must be positive, got {v}"));
        }
        if !(0.0..=0.05).contains(&self.noise) {
            return bad(format!("noise amplitude must lie in [0, 0.05], got {}", self.noise));
        }
        if self.saturation < 1 {
            return bad("saturation point must be at least 1".into());
        }
        if !(self.setup_seconds >= 0.0) {
            return bad("setup cost must be non-negative".into());
        }
        Ok(())
    }

    /// Configuration and thread scaling applied to every base cost.
    pub fn scale(&self, config: &CryptoConfig, threads: u32) -> f64 {
        let ring = 2f64.powi(config.log2_ring_dim as i32 - REFERENCE_LOG2_RING_DIM);
        let depth = config.depth as f64 / REFERENCE_DEPTH;
        let parallel = threads.max(1).min(self.saturation.max(1)) as f64;
        ring.powf(self.ring_exponent) * depth.powf(self.depth_exponent) / parallel
    }

    /// Noise-free seconds per call of `primitive`.
    pub fn per_call_seconds(&self, primitive: &str, config: &CryptoConfig, threads: u32) -> Result<f64, ProtocolError> {
        let base = self.base_costs.get(primitive).ok_or_else(|| {
            ProtocolError::Protocol(format!("synthetic model has no cost for primitive `{primitive}`"))
        })?;
        Ok(base * self.scale(config, threads))
    }

    /// Noise-free region-of-interest time of `manifest`.
    pub fn roi_seconds(
        &self,
        manifest: &OpCountManifest,
        config: &CryptoConfig,
        threads: u32,
    ) -> Result<f64, ProtocolError> {
        let mut total = 0.0;
        for (p, &c) in &manifest.counts {
            total += c as f64 * self.per_call_seconds(p, config, threads)?;
        }
        Ok(total)
    }
}

/// Spins the calling thread until `d` of wall time has passed.
pub fn spin_for(d: Duration) {
    let start = Instant::now();
    let mut x = 0u64;
    while start.elapsed() < d {
        for _ in 0..64 {
            x = black_box(x.wrapping_mul(6364136223846793005).wrapping_add(1));
        }
    }
    black_box(x);
}

/// Work list of one synthetic execution.
pub fn synthetic_manifest(
    invocation: &RunnerInvocation,
    config: &RunnerConfig,
    registry: &Registry,
) -> Result<OpCountManifest, ProtocolError> {
    if let Some(v) = config.extra_params.get(MANIFEST_PARAM) {
        let counts: BTreeMap<String, u64> = serde_json::from_value(v.clone())
            .map_err(|e| ProtocolError::Protocol(format!("{MANIFEST_PARAM} must map primitives to counts: {e}")))?;
        return Ok(OpCountManifest::from_counts(&invocation.benchmark, counts).scaled(invocation.repetitions));
    }
    let spec = registry
        .get(&invocation.benchmark)
        .map_err(|e| ProtocolError::Protocol(e.to_string()))?;
    match &spec.manifest {
        None => Ok(OpCountManifest::from_counts(
            &spec.name,
            [(spec.name.clone(), invocation.repetitions)],
        )),
        Some(m) => Ok(m.scaled(invocation.repetitions)),
    }
}

fn model_from(config: &RunnerConfig) -> Result<SyntheticCostModel, ProtocolError> {
    let model = match config.extra_params.get(MODEL_PARAM) {
        Some(v) => serde_json::from_value(v.clone())
            .map_err(|e| ProtocolError::Protocol(format!("invalid {MODEL_PARAM}: {e}")))?,
        None => SyntheticCostModel::default(),
    };
    model.validate()?;
    Ok(model)
}

/// Emulates one-off generation of serialized crypto artifacts.
fn ensure_artifacts(dir: &Path, crypto: &CryptoConfig) -> Result<(), ProtocolError> {
    let marker = dir.join("context.json");
    if marker.exists() {
        return Ok(());
    }
    let io = |source| ProtocolError::Io {
        path: dir.to_path_buf(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(io)?;
    let body = serde_json::json!({
        "config": crypto,
        "config_hash": crypto.cache_key(),
    });
    std::fs::write(&marker, serde_json::to_vec_pretty(&body).unwrap()).map_err(io)
}

/// Executes `invocation` in-process with the model found in its runner
/// config (or the default model), returning the self-report.
pub fn synthetic_execute(invocation: &RunnerInvocation, registry: &Registry) -> Result<SelfReport, ProtocolError> {
    let config = RunnerConfig::load(&invocation.config_path)?;
    let model = model_from(&config)?;
    synthetic_execute_with(invocation, &config, &model, registry)
}

pub fn synthetic_execute_with(
    invocation: &RunnerInvocation,
    config: &RunnerConfig,
    model: &SyntheticCostModel,
    registry: &Registry,
) -> Result<SelfReport, ProtocolError> {
    model.validate()?;
    let manifest = synthetic_manifest(invocation, config, registry)?;
    // resolve every cost before spending any time
    let mut plan = Vec::with_capacity(manifest.counts.len());
    for (p, &c) in &manifest.counts {
        plan.push((
            p.clone(),
            c,
            model.per_call_seconds(p, &config.crypto, invocation.thread_count)?,
        ));
    }

    if let Some(dir) = &config.artifact_dir {
        ensure_artifacts(dir, &config.crypto)?;
    }
    spin_for(Duration::from_secs_f64(model.setup_seconds));

    let mut inner_roi = None;
    let mut dynamic_counts = None;
    if invocation.phase == RunPhase::Full {
        let mut rng = match model.seed {
            Some(s) => ChaCha8Rng::seed_from_u64(s),
            None => ChaCha8Rng::from_entropy(),
        };
        let start = Instant::now();
        for (_, count, per_call) in &plan {
            let factor = if model.noise > 0.0 {
                1.0 + rng.gen_range(-model.noise..=model.noise)
            } else {
                1.0
            };
            spin_for(Duration::from_secs_f64(*count as f64 * per_call * factor));
        }
        inner_roi = Some(start.elapsed().as_secs_f64());
        dynamic_counts = Some(manifest.counts.clone());
    }

    Ok(SelfReport {
        benchmark: invocation.benchmark.clone(),
        phase: invocation.phase,
        repetitions_executed: invocation.repetitions,
        inner_roi_seconds: inner_roi,
        dynamic_counts,
    })
}
