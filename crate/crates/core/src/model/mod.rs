//! Additive cost model: an application's cost is the count-weighted sum of
//! its primitives' measured per-call costs at one (config, threads) key.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::denoise::DenoisedMetrics;
use crate::registry::{CryptoConfig, OpCountManifest};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("no cost entry for primitive `{primitive}` at {key}")]
    Coverage { primitive: String, key: CostKey },
    #[error("invalid argument: {0}")]
    Argument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CostKey {
    pub config: CryptoConfig,
    pub thread_count: u32,
}

impl CostKey {
    pub fn new(config: CryptoConfig, thread_count: u32) -> Self {
        CostKey { config, thread_count }
    }
}

impl fmt::Display for CostKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-t{}", self.config.label(), self.thread_count)
    }
}

/// Per-call cost of one primitive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostEntry {
    pub time: f64,
    /// `None` on hosts without an energy interface.
    pub energy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveCostTable {
    entries: BTreeMap<CostKey, BTreeMap<String, CostEntry>>,
}

impl PrimitiveCostTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: CostKey, primitive: impl Into<String>, entry: CostEntry) -> Result<(), ModelError> {
        let primitive = primitive.into();
        let finite_pos = |v: f64| v.is_finite() && v > 0.0;
        if !finite_pos(entry.time) || entry.energy.is_some_and(|e| !finite_pos(e)) {
            return Err(ModelError::Argument(format!(
                "cost of {primitive} at {key} must be positive, got {entry:?}"
            )));
        }
        self.entries.entry(key).or_default().insert(primitive, entry);
        Ok(())
    }

    /// Builds a table from denoised primitive measurements.
    ///
    /// Rows without per-call figures or with a zero ROI are skipped and
    /// returned so the caller can report them.
    pub fn from_metrics<'a, I>(metrics: I) -> (Self, Vec<&'a DenoisedMetrics>)
    where
        I: IntoIterator<Item = &'a DenoisedMetrics>,
    {
        let mut table = Self::new();
        let mut skipped = Vec::new();
        for m in metrics {
            let entry = match m.per_call_time {
                Some(time) => CostEntry {
                    time,
                    energy: m.per_call_energy.filter(|&e| e > 0.0),
                },
                None => {
                    skipped.push(m);
                    continue;
                }
            };
            let key = CostKey::new(m.config, m.thread_count);
            if table.insert(key, m.benchmark.clone(), entry).is_err() {
                skipped.push(m);
            }
        }
        (table, skipped)
    }

    pub fn get(&self, key: &CostKey, primitive: &str) -> Option<&CostEntry> {
        self.entries.get(key)?.get(primitive)
    }

    pub fn keys(&self) -> impl Iterator<Item = &CostKey> {
        self.entries.keys()
    }

    pub fn primitives(&self, key: &CostKey) -> impl Iterator<Item = (&String, &CostEntry)> {
        self.entries.get(key).into_iter().flatten()
    }

    /// Every cost multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for prims in out.entries.values_mut() {
            for e in prims.values_mut() {
                e.time *= factor;
                e.energy = e.energy.map(|v| v * factor);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub count: u64,
    /// count × per-call time, seconds.
    pub time: f64,
    pub energy: Option<f64>,
    pub time_share: f64,
    pub energy_share: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub benchmark: String,
    pub key: CostKey,
    pub total_time: f64,
    /// Present only when every contributing primitive has an energy cost.
    pub total_energy: Option<f64>,
    pub contributions: BTreeMap<String, Contribution>,
}

impl Prediction {
    /// Time shares in the order of `primitives`, zero for absent ones.
    pub fn share_vector<'a, I>(&self, primitives: I) -> Vec<f64>
    where
        I: IntoIterator<Item = &'a str>,
    {
        primitives
            .into_iter()
            .map(|p| self.contributions.get(p).map_or(0.0, |c| c.time_share))
            .collect()
    }
}

/// Predicts the cost of `manifest` from `table` at `key`. Any primitive with
/// a nonzero count and no entry at exactly `key` is an error.
pub fn predict(
    manifest: &OpCountManifest,
    table: &PrimitiveCostTable,
    key: &CostKey,
) -> Result<Prediction, ModelError> {
    let mut contributions = BTreeMap::new();
    let mut total_time = 0.0;
    let mut total_energy = Some(0.0);
    for (prim, &count) in &manifest.counts {
        if count == 0 {
            continue;
        }
        let cost = table.get(key, prim).ok_or_else(|| ModelError::Coverage {
            primitive: prim.clone(),
            key: *key,
        })?;
        let c = count as f64;
        let time = c * cost.time;
        let energy = cost.energy.map(|e| c * e);
        total_time += time;
        total_energy = match (total_energy, energy) {
            (Some(t), Some(e)) => Some(t + e),
            _ => None,
        };
        contributions.insert(
            prim.clone(),
            Contribution {
                count,
                time,
                energy,
                time_share: 0.0,
                energy_share: None,
            },
        );
    }
    for c in contributions.values_mut() {
        c.time_share = if total_time > 0.0 { c.time / total_time } else { 0.0 };
        c.energy_share = match (c.energy, total_energy) {
            (Some(e), Some(t)) if t > 0.0 => Some(e / t),
            _ => None,
        };
    }
    Ok(Prediction {
        benchmark: manifest.benchmark.clone(),
        key: *key,
        total_time,
        total_energy,
        contributions,
    })
}

/// Primitives by descending time share; shares renormalized to sum to 1.
pub fn breakdown(prediction: &Prediction) -> Result<Vec<(String, f64)>, ModelError> {
    if !(prediction.total_time > 0.0) {
        return Err(ModelError::Argument("prediction total is zero".into()));
    }
    let sum: f64 = prediction.contributions.values().map(|c| c.time).sum();
    let mut out: Vec<(String, f64)> = prediction
        .contributions
        .iter()
        .map(|(p, c)| (p.clone(), c.time / sum))
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}

/// Signed relative errors, `predicted / measured - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignedError {
    pub time: f64,
    pub energy: Option<f64>,
}

pub fn validate(prediction: &Prediction, measured: &DenoisedMetrics) -> Result<SignedError, ModelError> {
    if !(measured.roi_time > 0.0) {
        return Err(ModelError::Argument(format!(
            "measured ROI time of {} is zero",
            measured.benchmark
        )));
    }
    let energy = match (prediction.total_energy, measured.roi_energy) {
        (Some(p), Some(m)) if m > 0.0 => Some(p / m - 1.0),
        _ => None,
    };
    Ok(SignedError {
        time: prediction.total_time / measured.roi_time - 1.0,
        energy,
    })
}

/// Sign-preserving ratio geomean: `(Π (1 + ε_i))^(1/n) − 1`.
pub fn aggregate_geomean(errors: &[f64]) -> Result<f64, ModelError> {
    if errors.is_empty() {
        return Err(ModelError::Argument("no errors to aggregate".into()));
    }
    let mut log_sum = 0.0;
    for &e in errors {
        let ratio = 1.0 + e;
        if !(ratio > 0.0) || !ratio.is_finite() {
            return Err(ModelError::Argument(format!(
                "error {e} implies a nonpositive prediction"
            )));
        }
        log_sum += ratio.ln();
    }
    Ok((log_sum / errors.len() as f64).exp() - 1.0)
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, ModelError> {
    if a.len() != b.len() {
        return Err(ModelError::Argument(format!(
            "vector lengths differ ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(ModelError::Argument("cosine similarity of a zero vector".into()));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// `time(a) / time(b)`: how much faster `b` is.
    pub speedup: f64,
    pub energy_ratio: Option<f64>,
}

/// Compares two algorithms, each predicted at its own key.
pub fn compare_algorithms(
    a: &OpCountManifest,
    key_a: &CostKey,
    b: &OpCountManifest,
    key_b: &CostKey,
    table: &PrimitiveCostTable,
) -> Result<Comparison, ModelError> {
    let pa = predict(a, table, key_a)?;
    let pb = predict(b, table, key_b)?;
    if !(pa.total_time > 0.0 && pb.total_time > 0.0) {
        return Err(ModelError::Argument("cannot compare an empty manifest".into()));
    }
    let energy_ratio = match (pa.total_energy, pb.total_energy) {
        (Some(x), Some(y)) if x > 0.0 && y > 0.0 => Some(x / y),
        _ => None,
    };
    Ok(Comparison {
        speedup: pa.total_time / pb.total_time,
        energy_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key() -> CostKey {
        CostKey::new(CryptoConfig::new(16, 10, 4096), 8)
    }

    fn table() -> PrimitiveCostTable {
        let mut t = PrimitiveCostTable::new();
        t.insert(
            key(),
            "EvalAdd",
            CostEntry {
                time: 1e-3,
                energy: Some(0.1),
            },
        )
        .unwrap();
        t.insert(
            key(),
            "EvalMult",
            CostEntry {
                time: 10e-3,
                energy: Some(2.0),
            },
        )
        .unwrap();
        t
    }

    fn two_three() -> OpCountManifest {
        OpCountManifest::from_counts("m", [("EvalAdd", 2), ("EvalMult", 3)])
    }

    #[test]
    fn hand_sum() {
        let p = predict(&two_three(), &table(), &key()).unwrap();
        assert!((p.total_time - 0.032).abs() < 1e-15);
        assert!((p.total_energy.unwrap() - 6.2).abs() < 1e-12);
        let b = breakdown(&p).unwrap();
        assert_eq!(b[0].0, "EvalMult");
        assert!((b[0].1 - 0.9375).abs() < 1e-12);
        assert!((b[1].1 - 0.0625).abs() < 1e-12);
    }

    #[test]
    fn empty_and_singleton() {
        let p = predict(&OpCountManifest::new("e"), &table(), &key()).unwrap();
        assert_eq!(p.total_time, 0.0);
        assert_eq!(p.total_energy, Some(0.0));
        assert!(p.contributions.is_empty());
        assert!(breakdown(&p).is_err());

        let p = predict(&OpCountManifest::from_counts("s", [("EvalMult", 1)]), &table(), &key()).unwrap();
        assert_eq!(p.total_time, 10e-3);
        assert_eq!(p.contributions["EvalMult"].time_share, 1.0);
        assert_eq!(breakdown(&p).unwrap(), vec![("EvalMult".to_string(), 1.0)]);
    }

    #[test]
    fn coverage_error_names_primitive_and_key() {
        let m = OpCountManifest::from_counts("m", [("EvalRotate", 1)]);
        let err = predict(&m, &table(), &key()).unwrap_err();
        assert_eq!(
            err.to_string(),
            "no cost entry for primitive `EvalRotate` at n16-l10-b4096-none-t8"
        );
        let other = CostKey::new(CryptoConfig::new(16, 10, 4096), 4);
        assert!(matches!(
            predict(&two_three(), &table(), &other),
            Err(ModelError::Coverage { .. })
        ));
    }

    #[test]
    fn energy_absent_when_any_entry_lacks_it() {
        let mut t = table();
        t.insert(
            key(),
            "EvalRotate",
            CostEntry {
                time: 1.0,
                energy: None,
            },
        )
        .unwrap();
        let m = OpCountManifest::from_counts("m", [("EvalRotate", 1), ("EvalAdd", 1)]);
        let p = predict(&m, &t, &key()).unwrap();
        assert_eq!(p.total_energy, None);
        assert!(p.contributions.values().all(|c| c.energy_share.is_none()));
    }

    #[test]
    fn nonpositive_costs_rejected() {
        let mut t = PrimitiveCostTable::new();
        assert!(t
            .insert(
                key(),
                "x",
                CostEntry {
                    time: 0.0,
                    energy: None
                }
            )
            .is_err());
        assert!(t
            .insert(
                key(),
                "x",
                CostEntry {
                    time: 1.0,
                    energy: Some(-1.0)
                }
            )
            .is_err());
        assert!(t
            .insert(
                key(),
                "x",
                CostEntry {
                    time: f64::NAN,
                    energy: None
                }
            )
            .is_err());
    }

    #[test]
    fn validate_signed_error() {
        let p = Prediction {
            benchmark: "b".into(),
            key: key(),
            total_time: 9.0,
            total_energy: None,
            contributions: BTreeMap::new(),
        };
        let mut m = crate::denoise::denoise(&crate::profiler::test_support::record(10.0), &{
            let mut s = crate::profiler::test_support::record(0.0);
            s.phase = crate::runner::RunPhase::Setup;
            s
        })
        .unwrap();
        assert!((validate(&p, &m).unwrap().time + 0.1).abs() < 1e-15);
        m.roi_time = 9.0;
        assert_eq!(validate(&p, &m).unwrap().time, 0.0);
        m.roi_time = 0.0;
        assert!(validate(&p, &m).is_err());
    }

    #[test]
    fn geomean_examples() {
        assert!((aggregate_geomean(&[0.1, 0.1]).unwrap() - 0.1).abs() < 1e-12);
        assert!((aggregate_geomean(&[0.21, 0.0]).unwrap() - 0.1).abs() < 1e-12);
        assert!(aggregate_geomean(&[-0.5, 1.0]).unwrap().abs() < 1e-12);
        assert!(aggregate_geomean(&[-1.0]).is_err());
        assert!(aggregate_geomean(&[]).is_err());
        assert!((aggregate_geomean(&[-0.0702]).unwrap() + 0.0702).abs() < 1e-15);
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(cosine_similarity(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn comparison_ratios() {
        let b = two_three();
        let a = b.scaled(10);
        let c = compare_algorithms(&a, &key(), &b, &key(), &table()).unwrap();
        assert!((c.speedup - 10.0).abs() < 1e-12);
        assert!((c.energy_ratio.unwrap() - 10.0).abs() < 1e-12);
        let same = compare_algorithms(&b, &key(), &b, &key(), &table()).unwrap();
        assert_eq!(same.speedup, 1.0);
    }

    #[test]
    fn table_from_metrics_uses_per_call_figures() {
        use crate::profiler::test_support::record;
        let mut s = record(0.0);
        s.phase = crate::runner::RunPhase::Setup;
        let m = crate::denoise::denoise(&record(0.5), &s).unwrap();
        let m = crate::denoise::per_call(m, 250).unwrap();
        let (t, skipped) = PrimitiveCostTable::from_metrics([&m]);
        assert!(skipped.is_empty());
        let e = t.get(&CostKey::new(m.config, 1), "EvalAdd").unwrap();
        assert!((e.time - 0.002).abs() < 1e-15);
        assert!((e.energy.unwrap() - 0.02).abs() < 1e-15);
    }
}
