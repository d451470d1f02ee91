use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RegistryError;

/// Manifest key that absorbs operations outside the registered primitive set.
pub const OTHER: &str = "other";

/// Per-benchmark invocation count of every primitive.
///
/// Zero counts are not stored; [`OpCountManifest::count`] reports them as 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCountManifest {
    pub benchmark: String,
    pub counts: BTreeMap<String, u64>,
}

impl OpCountManifest {
    pub fn new(benchmark: impl Into<String>) -> Self {
        OpCountManifest {
            benchmark: benchmark.into(),
            counts: BTreeMap::new(),
        }
    }

    pub fn from_counts<I, K>(benchmark: impl Into<String>, counts: I) -> Self
    where
        I: IntoIterator<Item = (K, u64)>,
        K: Into<String>,
    {
        let mut m = OpCountManifest::new(benchmark);
        for (k, c) in counts {
            m.add(k, c);
        }
        m
    }

    /// Adds `count` invocations of `primitive`.
    pub fn add(&mut self, primitive: impl Into<String>, count: u64) {
        if count == 0 {
            return;
        }
        *self.counts.entry(primitive.into()).or_insert(0) += count;
    }

    pub fn count(&self, primitive: &str) -> u64 {
        self.counts.get(primitive).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.values().all(|&c| c == 0)
    }

    /// Count-wise sum of two manifests.
    pub fn merged(&self, other: &OpCountManifest) -> OpCountManifest {
        let mut out = self.clone();
        for (k, &c) in &other.counts {
            out.add(k.clone(), c);
        }
        out
    }

    /// Every count multiplied by `k`.
    pub fn scaled(&self, k: u64) -> OpCountManifest {
        OpCountManifest::from_counts(
            self.benchmark.clone(),
            self.counts.iter().map(|(p, &c)| (p.clone(), c * k)),
        )
    }

    /// Loads a standalone manifest document:
    ///
    /// ```toml
    /// benchmark = "rectangular-mm"
    /// [counts]
    /// EvalAdd = 120
    /// "EvalMult(Plaintext)" = 8
    /// ```
    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        let text = std::fs::read_to_string(path).map_err(|source| RegistryError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, RegistryError> {
        #[derive(Deserialize)]
        struct Doc {
            benchmark: String,
            #[serde(default)]
            counts: BTreeMap<String, u64>,
        }
        let doc: Doc = toml::from_str(text).map_err(|e| RegistryError::Parse {
            origin: origin.to_string(),
            message: e.to_string(),
        })?;
        Ok(OpCountManifest::from_counts(doc.benchmark, doc.counts))
    }

    pub fn to_toml(&self) -> String {
        let mut s = format!("benchmark = {:?}\n\n[counts]\n", self.benchmark);
        for (k, c) in &self.counts {
            s.push_str(&format!("{k:?} = {c}\n"));
        }
        s
    }
}
