//! Characterization toolkit for CKKS homomorphic-encryption workloads.
//!
//! The crate is organised along the measurement pipeline:
//!
//! * [`registry`] catalogs primitives, microbenchmarks and workloads together
//!   with their default cryptographic parameters and operation-count manifests.
//! * [`runner`] fixes the contract with benchmark executables and ships a
//!   deterministic synthetic backend that honours it.
//! * [`profiler`] executes runner invocations while reading wall time, package
//!   energy and performance-counter events.
//! * [`denoise`] subtracts the setup pass from the full pass and derives power,
//!   IPC and per-call figures.
//! * [`flamegraph`] folds sampled call stacks and renders SVG flame graphs.
//! * [`model`] predicts application cost as a count-weighted sum of primitive
//!   costs and validates the prediction.
//! * [`orchestrator`] expands parameter sweeps, runs them, and owns the results
//!   store and reports.

// NaN must fail range checks, hence `!(x > 0.0)` over `x <= 0.0`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod denoise;
pub mod flamegraph;
pub mod model;
pub mod orchestrator;
pub mod profiler;
pub mod registry;
pub mod runner;
pub mod stats;

pub use denoise::DenoisedMetrics;
pub use model::{CostKey, Prediction, PrimitiveCostTable};
pub use profiler::MeasurementRecord;
pub use registry::{AbstractionLevel, BenchmarkSpec, CryptoConfig, OpCountManifest, Registry, SecurityStandard};
pub use runner::{RunPhase, RunnerInvocation, SelfReport};
