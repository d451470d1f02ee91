//! Input builders shared by the benchmarks.

use fheprof_core::flamegraph::StackSample;
use fheprof_core::model::{CostEntry, CostKey, PrimitiveCostTable};
use fheprof_core::registry::{CryptoConfig, Registry};

pub fn default_key() -> CostKey {
    CostKey::new(CryptoConfig::new(16, 10, 4096), 8)
}

/// A cost entry for every registered primitive at [`default_key`].
pub fn full_table(registry: &Registry) -> PrimitiveCostTable {
    let key = default_key();
    let mut t = PrimitiveCostTable::new();
    for (i, p) in registry.primitive_names().into_iter().enumerate() {
        let time = 1e-4 * (i + 1) as f64;
        t.insert(
            key,
            p,
            CostEntry {
                time,
                energy: Some(time * 60.0),
            },
        )
        .unwrap();
    }
    t
}

/// `n` deterministic stacks over a small call tree.
pub fn stacks(n: usize) -> Vec<StackSample> {
    let leaves = ["ModMul", "NTT", "INTT", "Automorphism", "KeySwitch", "Rescale"];
    let mids = ["EvalMult", "EvalRotate", "EvalAdd", "EvalBootstrap"];
    (0..n)
        .map(|i| {
            let frames = vec![
                "bench".to_string(),
                "main".to_string(),
                mids[i % mids.len()].to_string(),
                leaves[(i * 7) % leaves.len()].to_string(),
            ];
            StackSample::new(frames, 1 + (i % 3) as u64)
        })
        .collect()
}
