//! Prediction and validation against stored measurements.

use std::time::Instant;

use serde::Serialize;

use super::execute::load_denoised;
use super::store::{ResultRow, ResultStore, RowFilter};
use super::OrchestratorError;
use crate::denoise::DenoisedMetrics;
use crate::flamegraph::FoldedProfile;
use crate::model::{cosine_similarity, predict, validate, CostKey, Prediction, PrimitiveCostTable, SignedError};
use crate::registry::{OpCountManifest, Registry};

/// Cost table assembled from every stored primitive measurement.
pub fn cost_table(store: &ResultStore, registry: &Registry) -> Result<PrimitiveCostTable, OrchestratorError> {
    let rows = load_denoised(store, &RowFilter::default())?;
    let primitives: Vec<&DenoisedMetrics> = rows
        .iter()
        .map(|(_, m, _)| m)
        .filter(|m| registry.get(&m.benchmark).is_ok_and(|s| s.is_primitive()))
        .collect();
    let (table, skipped) = PrimitiveCostTable::from_metrics(primitives);
    for m in skipped {
        log::warn!(
            "{} at {}-t{} has no usable per-call cost; left out of the cost table",
            m.benchmark,
            m.config.label(),
            m.thread_count
        );
    }
    Ok(table)
}

/// Predicts `manifest` at `key` from the store's cost table and records the
/// prediction, timed from table assembly to result.
pub fn predict_from_store(
    store: &mut ResultStore,
    registry: &Registry,
    manifest: &OpCountManifest,
    source: &str,
    key: &CostKey,
) -> Result<(Prediction, f64), OrchestratorError> {
    let start = Instant::now();
    let table = cost_table(store, registry)?;
    let prediction = predict(manifest, &table, key)?;
    let elapsed = start.elapsed().as_secs_f64();
    store.persist(&[ResultRow::from_prediction(&prediction, source, elapsed)])?;
    Ok((prediction, elapsed))
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationOutcome {
    pub benchmark: String,
    pub key: CostKey,
    pub prediction: Prediction,
    pub measured_time: f64,
    pub measured_energy: Option<f64>,
    pub error: SignedError,
    /// Cosine similarity of predicted and observed primitive time shares,
    /// with the source of the observed shares.
    pub cosine: Option<(f64, String)>,
}

fn observed_shares(
    store: &ResultStore,
    point: &str,
    measured: &DenoisedMetrics,
    table: &PrimitiveCostTable,
    key: &CostKey,
    primitives: &[&str],
) -> Option<(Vec<f64>, &'static str)> {
    let folded = store
        .stack_dir()
        .join(format!("{}.folded", crate::runner::sanitize(point)));
    if let Ok(text) = std::fs::read_to_string(&folded) {
        if let Ok(profile) = FoldedProfile::from_folded_text(&text) {
            if let Ok(top) = profile.top_functions(usize::MAX) {
                let v: Vec<f64> = primitives
                    .iter()
                    .map(|p| top.iter().find(|(f, _)| f == p).map_or(0.0, |(_, s)| *s))
                    .collect();
                if v.iter().any(|&x| x > 0.0) {
                    return Some((v, "stacks"));
                }
            }
        }
    }
    if measured.dynamic_counts.is_empty() {
        return None;
    }
    let v: Vec<f64> = primitives
        .iter()
        .map(|p| {
            let c = measured.dynamic_counts.get(*p).copied().unwrap_or(0) as f64;
            table.get(key, p).map_or(0.0, |e| c * e.time)
        })
        .collect();
    Some((v, "dynamic-counts"))
}

/// Predicts every stored measurement of `benchmark` at its own key and
/// compares. Keys the cost table does not cover are reported as gaps.
pub fn validate_benchmark(
    store: &mut ResultStore,
    registry: &Registry,
    benchmark: &str,
) -> Result<(Vec<ValidationOutcome>, Vec<String>), OrchestratorError> {
    let manifest = registry.get_manifest(benchmark)?.clone();
    let table = cost_table(store, registry)?;
    let measured = load_denoised(store, &RowFilter::benchmark(benchmark))?;
    let mut outcomes = Vec::new();
    let mut gaps = Vec::new();
    if measured.is_empty() {
        gaps.push(format!("no measurements of {benchmark} in the store"));
    }
    let mut rows = Vec::new();
    for (point, m, _) in &measured {
        let key = CostKey::new(m.config, m.thread_count);
        let start = Instant::now();
        let prediction = match predict(&manifest, &table, &key) {
            Ok(p) => p,
            Err(e) => {
                gaps.push(format!("{point}: {e}"));
                continue;
            }
        };
        let elapsed = start.elapsed().as_secs_f64();
        let error = match validate(&prediction, m) {
            Ok(e) => e,
            Err(e) => {
                gaps.push(format!("{point}: {e}"));
                continue;
            }
        };
        let prims: Vec<&str> = prediction.contributions.keys().map(String::as_str).collect();
        let predicted = prediction.share_vector(prims.iter().copied());
        let cosine = observed_shares(store, point, m, &table, &key, &prims)
            .and_then(|(obs, src)| cosine_similarity(&predicted, &obs).ok().map(|c| (c, src.to_string())));
        rows.push(ResultRow::from_prediction(&prediction, "registry", elapsed));
        rows.push(ResultRow::from_validation(
            &prediction,
            m,
            &error,
            cosine.as_ref().map(|(c, s)| (*c, s.as_str())),
        ));
        outcomes.push(ValidationOutcome {
            benchmark: benchmark.to_string(),
            key,
            prediction,
            measured_time: m.roi_time,
            measured_energy: m.roi_energy,
            error,
            cosine,
        });
    }
    store.persist(&rows)?;
    Ok((outcomes, gaps))
}
