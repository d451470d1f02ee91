//! Region-of-interest isolation by setup-phase subtraction.

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profiler::MeasurementRecord;
use crate::registry::CryptoConfig;
use crate::runner::RunPhase;

#[derive(Debug, Error, PartialEq)]
pub enum DenoiseError {
    #[error("invalid argument: {0}")]
    Argument(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoisedMetrics {
    pub benchmark: String,
    pub config: CryptoConfig,
    pub thread_count: u32,
    /// Full-phase wall time the ROI was derived from.
    pub full_time: f64,
    /// Setup-phase wall time that was subtracted.
    pub setup_time: f64,
    pub roi_time: f64,
    pub roi_energy: Option<f64>,
    pub avg_power: Option<f64>,
    pub ipc: Option<f64>,
    pub roi_events: BTreeMap<String, f64>,
    pub per_call_time: Option<f64>,
    pub per_call_energy: Option<f64>,
    pub per_call_events: BTreeMap<String, f64>,
    pub calls: u64,
    /// Operation counts the full run reported, if any.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub dynamic_counts: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl DenoisedMetrics {
    /// Setup time relative to the region of interest, in percent.
    pub fn setup_overhead_percent(&self) -> Option<f64> {
        (self.roi_time > 0.0).then(|| 100.0 * self.setup_time / self.roi_time)
    }

    fn warn(&mut self, msg: String) {
        warn!("{} {}: {msg}", self.benchmark, self.config.label());
        self.warnings.push(msg);
    }
}

fn clamp(value: f64, what: &str, warnings: &mut Vec<String>) -> f64 {
    if value < 0.0 {
        warnings.push(format!("negative ROI {what} ({value:.3e}) clamped to 0"));
        0.0
    } else {
        value
    }
}

/// Subtracts `setup` from `full` field by field.
///
/// Energy is present only when both inputs carry it. Events measured in only
/// one of the two records are dropped. Negative differences clamp to zero,
/// each with a warning.
pub fn denoise(full: &MeasurementRecord, setup: &MeasurementRecord) -> Result<DenoisedMetrics, DenoiseError> {
    if full.benchmark != setup.benchmark || full.config != setup.config || full.thread_count != setup.thread_count {
        return Err(DenoiseError::Argument(format!(
            "heterogeneous records: {} {} t={} vs {} {} t={}",
            full.benchmark,
            full.config.label(),
            full.thread_count,
            setup.benchmark,
            setup.config.label(),
            setup.thread_count
        )));
    }
    if full.phase != RunPhase::Full || setup.phase != RunPhase::Setup {
        return Err(DenoiseError::Argument(format!(
            "expected a full and a setup record, got {} and {}",
            full.phase, setup.phase
        )));
    }

    let mut warnings = Vec::new();
    let roi_time = clamp(full.wall_time - setup.wall_time, "time", &mut warnings);
    let roi_energy = match (full.energy, setup.energy) {
        (Some(f), Some(s)) => Some(clamp(f - s, "energy", &mut warnings)),
        _ => None,
    };
    let mut roi_events = BTreeMap::new();
    for (name, &f) in &full.event_counts {
        match setup.event_counts.get(name) {
            Some(&s) => {
                roi_events.insert(name.clone(), clamp(f - s, name, &mut warnings));
            }
            None => warnings.push(format!("event {name} missing from setup record; dropped")),
        }
    }
    for name in setup.event_counts.keys() {
        if !full.event_counts.contains_key(name) {
            warnings.push(format!("event {name} missing from full record; dropped"));
        }
    }
    for w in &warnings {
        warn!("{} {}: {w}", full.benchmark, full.config.label());
    }

    Ok(DenoisedMetrics {
        benchmark: full.benchmark.clone(),
        config: full.config,
        thread_count: full.thread_count,
        full_time: full.wall_time,
        setup_time: setup.wall_time,
        roi_time,
        roi_energy,
        avg_power: None,
        ipc: None,
        roi_events,
        per_call_time: None,
        per_call_energy: None,
        per_call_events: BTreeMap::new(),
        calls: 1,
        dynamic_counts: full.dynamic_counts.clone(),
        warnings,
    })
}

/// Populates average power and IPC from the denoised totals.
pub fn derive(mut m: DenoisedMetrics) -> DenoisedMetrics {
    m.avg_power = None;
    if let Some(e) = m.roi_energy {
        if m.roi_time > 0.0 {
            m.avg_power = Some(e / m.roi_time);
        } else {
            m.warn("ROI time is 0; average power absent".into());
        }
    }
    m.ipc = None;
    if let (Some(&i), Some(&c)) = (m.roi_events.get("instructions"), m.roi_events.get("cpu-cycles")) {
        if c > 0.0 {
            m.ipc = Some(i / c);
        } else {
            m.warn("degenerate cpu-cycles count 0; IPC absent".into());
        }
    }
    m
}

/// Divides the totals by the number of internal calls.
pub fn per_call(mut m: DenoisedMetrics, calls: u64) -> Result<DenoisedMetrics, DenoiseError> {
    if calls < 1 {
        return Err(DenoiseError::Argument("calls must be at least 1".into()));
    }
    let n = calls as f64;
    m.calls = calls;
    m.per_call_time = Some(m.roi_time / n);
    m.per_call_energy = m.roi_energy.map(|e| e / n);
    m.per_call_events = m.roi_events.iter().map(|(k, v)| (k.clone(), v / n)).collect();
    Ok(m)
}
