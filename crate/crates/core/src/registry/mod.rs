//! Benchmark catalog.
//!
//! Every benchmark is described by one TOML document carrying its name,
//! abstraction level, runner binding, default [`CryptoConfig`], optional
//! benchmark-specific knobs, and (for microbenchmarks and workloads) the
//! operation-count manifest the cost model consumes. The built-in documents
//! live under `data/benchmarks/` and are compiled into the binary;
//! [`Registry::from_dir`] loads an edited copy instead.

mod config;
mod manifest;
mod security;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{
    validate_config, ConfigOverrides, CryptoConfig, SecurityStandard, Violation, MAX_LOG2_RING_DIM, MIN_LOG2_RING_DIM,
};
pub use manifest::{OpCountManifest, OTHER};
pub use security::{SecurityRule, SecurityTables};

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("unknown benchmark `{0}`")]
    UnknownBenchmark(String),
    #[error("benchmark `{0}` is a primitive and has no operation-count manifest")]
    NoManifest(String),
    #[error("duplicate benchmark name `{0}`")]
    Duplicate(String),
    #[error("invalid configuration {config}: {}", join_violations(.violations))]
    InvalidCombination {
        config: CryptoConfig,
        violations: Vec<Violation>,
    },
    #[error("manifest `{benchmark}`: {reason}")]
    InvalidManifest { benchmark: String, reason: String },
    #[error("failed to parse {origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// Abstraction level of a benchmark, ordered by complexity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AbstractionLevel {
    Primitive,
    Microbenchmark,
    Workload,
}

impl AbstractionLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            AbstractionLevel::Primitive => "primitive",
            AbstractionLevel::Microbenchmark => "microbenchmark",
            AbstractionLevel::Workload => "workload",
        }
    }
}

impl fmt::Display for AbstractionLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AbstractionLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "primitive" | "primitives" => Ok(AbstractionLevel::Primitive),
            "microbenchmark" | "microbenchmarks" => Ok(AbstractionLevel::Microbenchmark),
            "workload" | "workloads" => Ok(AbstractionLevel::Workload),
            other => Err(format!("unknown abstraction level `{other}`")),
        }
    }
}

/// A registered benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub name: String,
    pub title: String,
    pub level: AbstractionLevel,
    #[serde(default)]
    pub description: String,
    /// Executable implementing the runner protocol; resolved through `PATH`
    /// when it contains no path separator.
    pub runner: String,
    pub default_config: CryptoConfig,
    #[serde(default)]
    pub extra_params: BTreeMap<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<OpCountManifest>,
}

impl BenchmarkSpec {
    pub fn is_primitive(&self) -> bool {
        self.level == AbstractionLevel::Primitive
    }
}

/// Result of merging defaults, overrides and security-standard mandates.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub config: CryptoConfig,
    pub warnings: Vec<String>,
}

#[derive(Deserialize)]
struct SpecDocument {
    name: String,
    title: Option<String>,
    level: AbstractionLevel,
    #[serde(default)]
    description: String,
    runner: String,
    default_config: CryptoConfig,
    #[serde(default)]
    extra_params: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    manifest: BTreeMap<String, u64>,
}

const BUILTIN_DOCUMENTS: &[(&str, &str)] = &[
    (
        "00-eval-add.toml",
        include_str!("../../data/benchmarks/00-eval-add.toml"),
    ),
    (
        "01-eval-add-plaintext.toml",
        include_str!("../../data/benchmarks/01-eval-add-plaintext.toml"),
    ),
    (
        "02-eval-sub.toml",
        include_str!("../../data/benchmarks/02-eval-sub.toml"),
    ),
    (
        "03-eval-sub-scalar.toml",
        include_str!("../../data/benchmarks/03-eval-sub-scalar.toml"),
    ),
    (
        "04-eval-mult.toml",
        include_str!("../../data/benchmarks/04-eval-mult.toml"),
    ),
    (
        "05-eval-mult-no-relin.toml",
        include_str!("../../data/benchmarks/05-eval-mult-no-relin.toml"),
    ),
    (
        "06-eval-mult-plaintext.toml",
        include_str!("../../data/benchmarks/06-eval-mult-plaintext.toml"),
    ),
    (
        "07-eval-mult-scalar.toml",
        include_str!("../../data/benchmarks/07-eval-mult-scalar.toml"),
    ),
    (
        "08-eval-square.toml",
        include_str!("../../data/benchmarks/08-eval-square.toml"),
    ),
    (
        "09-eval-rotate.toml",
        include_str!("../../data/benchmarks/09-eval-rotate.toml"),
    ),
    (
        "10-eval-fast-rotate.toml",
        include_str!("../../data/benchmarks/10-eval-fast-rotate.toml"),
    ),
    (
        "11-eval-bootstrap.toml",
        include_str!("../../data/benchmarks/11-eval-bootstrap.toml"),
    ),
    (
        "12-eval-chebyshev-function.toml",
        include_str!("../../data/benchmarks/12-eval-chebyshev-function.toml"),
    ),
    (
        "13-eval-chebyshev-series.toml",
        include_str!("../../data/benchmarks/13-eval-chebyshev-series.toml"),
    ),
    (
        "20-matrix-mult-32.toml",
        include_str!("../../data/benchmarks/20-matrix-mult-32.toml"),
    ),
    (
        "21-logistic-function.toml",
        include_str!("../../data/benchmarks/21-logistic-function.toml"),
    ),
    (
        "22-sign-eval.toml",
        include_str!("../../data/benchmarks/22-sign-eval.toml"),
    ),
    ("23-cifar10.toml", include_str!("../../data/benchmarks/23-cifar10.toml")),
    (
        "24-resnet20.toml",
        include_str!("../../data/benchmarks/24-resnet20.toml"),
    ),
    ("25-logreg.toml", include_str!("../../data/benchmarks/25-logreg.toml")),
    (
        "26-chi-square.toml",
        include_str!("../../data/benchmarks/26-chi-square.toml"),
    ),
];

const BUILTIN_SECURITY: &str = include_str!("../../data/security.toml");

/// Read-only catalog of benchmarks and security-standard rules.
#[derive(Debug, Clone)]
pub struct Registry {
    specs: BTreeMap<String, BenchmarkSpec>,
    security: SecurityTables,
}

impl Registry {
    /// The catalog compiled into the crate.
    pub fn builtin() -> Self {
        let security =
            SecurityTables::parse(BUILTIN_SECURITY, "security.toml").expect("built-in security table parses");
        Registry::from_documents(
            BUILTIN_DOCUMENTS.iter().map(|(o, t)| (o.to_string(), t.to_string())),
            security,
        )
        .expect("built-in catalog is consistent")
    }

    /// Loads every `*.toml` in `dir`. A `security.toml` inside the directory
    /// replaces the built-in security rules.
    pub fn from_dir(dir: &Path) -> Result<Self, RegistryError> {
        let io = |source| RegistryError::Io {
            path: dir.to_path_buf(),
            source,
        };
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
            .collect();
        paths.sort();
        let mut security = None;
        let mut docs = Vec::new();
        for p in paths {
            let text = std::fs::read_to_string(&p).map_err(|source| RegistryError::Io {
                path: p.clone(),
                source,
            })?;
            if p.file_name().is_some_and(|n| n == "security.toml") {
                security = Some(SecurityTables::parse(&text, &p.display().to_string())?);
            } else {
                docs.push((p.display().to_string(), text));
            }
        }
        let security = match security {
            Some(s) => s,
            None => SecurityTables::parse(BUILTIN_SECURITY, "security.toml")?,
        };
        Registry::from_documents(docs, security)
    }

    pub fn from_documents<I>(docs: I, security: SecurityTables) -> Result<Self, RegistryError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut specs = BTreeMap::new();
        for (origin, text) in docs {
            let doc: SpecDocument = toml::from_str(&text).map_err(|e| RegistryError::Parse {
                origin: origin.clone(),
                message: e.to_string(),
            })?;
            let manifest = if doc.level == AbstractionLevel::Primitive {
                None
            } else {
                Some(OpCountManifest::from_counts(doc.name.clone(), doc.manifest))
            };
            let spec = BenchmarkSpec {
                title: doc.title.unwrap_or_else(|| doc.name.clone()),
                name: doc.name,
                level: doc.level,
                description: doc.description,
                runner: doc.runner,
                default_config: doc.default_config,
                extra_params: doc.extra_params,
                manifest,
            };
            if specs.contains_key(&spec.name) {
                return Err(RegistryError::Duplicate(spec.name));
            }
            specs.insert(spec.name.clone(), spec);
        }
        let reg = Registry { specs, security };
        for spec in reg.specs.values() {
            if let Some(m) = &spec.manifest {
                reg.check_manifest(m)?;
            }
        }
        Ok(reg)
    }

    /// Rebinds every benchmark to `runner`.
    pub fn with_runner(mut self, runner: impl Into<String>) -> Self {
        let runner = runner.into();
        for spec in self.specs.values_mut() {
            spec.runner = runner.clone();
        }
        self
    }

    pub fn security(&self) -> &SecurityTables {
        &self.security
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    /// Benchmarks sorted by (level, name), optionally restricted to one level.
    pub fn list(&self, level: Option<AbstractionLevel>) -> Vec<&BenchmarkSpec> {
        let mut out: Vec<&BenchmarkSpec> = self
            .specs
            .values()
            .filter(|s| level.is_none_or(|l| s.level == l))
            .collect();
        out.sort_by(|a, b| (a.level, &a.name).cmp(&(b.level, &b.name)));
        out
    }

    pub fn primitive_names(&self) -> Vec<&str> {
        self.list(Some(AbstractionLevel::Primitive))
            .into_iter()
            .map(|s| s.name.as_str())
            .collect()
    }

    pub fn get(&self, name: &str) -> Result<&BenchmarkSpec, RegistryError> {
        self.specs
            .get(name)
            .ok_or_else(|| RegistryError::UnknownBenchmark(name.to_string()))
    }

    pub fn get_manifest(&self, name: &str) -> Result<&OpCountManifest, RegistryError> {
        let spec = self.get(name)?;
        spec.manifest
            .as_ref()
            .ok_or_else(|| RegistryError::NoManifest(name.to_string()))
    }

    /// Verifies that every key is a registered primitive or [`OTHER`].
    pub fn check_manifest(&self, m: &OpCountManifest) -> Result<(), RegistryError> {
        for key in m.counts.keys() {
            let known = key == OTHER
                || self
                    .specs
                    .get(key)
                    .is_some_and(|s| s.level == AbstractionLevel::Primitive);
            if !known {
                return Err(RegistryError::InvalidManifest {
                    benchmark: m.benchmark.clone(),
                    reason: format!("`{key}` is not a registered primitive"),
                });
            }
        }
        Ok(())
    }

    /// Merges `overrides` into the benchmark defaults and applies the
    /// security standard's mandates.
    ///
    /// When a standard is set, the ring dimension is raised to the smallest
    /// one whose depth cap admits the requested depth. A raise that discards
    /// an explicit override is reported in `warnings`.
    pub fn resolve_config(
        &self,
        spec: &BenchmarkSpec,
        overrides: &ConfigOverrides,
    ) -> Result<ResolvedConfig, RegistryError> {
        let mut config = overrides.apply(spec.default_config);
        let mut warnings = Vec::new();

        if config.security_standard != SecurityStandard::None {
            let rule = self.security.rule(config.security_standard);
            match rule.and_then(|r| r.min_log2_ring_dim(config.depth)) {
                Some(required) if required > config.log2_ring_dim => {
                    let msg = if overrides.log2_ring_dim.is_some() {
                        format!(
                            "{}: security standard {} overrides requested N=2^{} with N=2^{} for depth {}",
                            spec.name, config.security_standard, config.log2_ring_dim, required, config.depth
                        )
                    } else {
                        format!(
                            "{}: security standard {} raises default N=2^{} to N=2^{} for depth {}",
                            spec.name, config.security_standard, config.log2_ring_dim, required, config.depth
                        )
                    };
                    warn!("{msg}");
                    warnings.push(msg);
                    config.log2_ring_dim = required;
                }
                Some(_) => {}
                None => {
                    return Err(RegistryError::InvalidCombination {
                        config,
                        violations: vec![Violation {
                            field: "depth",
                            value: config.depth.to_string(),
                            reason: format!(
                                "no ring dimension satisfies security standard {} at this depth",
                                config.security_standard
                            ),
                        }],
                    })
                }
            }
        }

        validate_config(&config).map_err(|violations| RegistryError::InvalidCombination { config, violations })?;
        Ok(ResolvedConfig { config, warnings })
    }
}
