use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Smallest and largest supported ring-dimension exponents.
pub const MIN_LOG2_RING_DIM: u32 = 13;
pub const MAX_LOG2_RING_DIM: u32 = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SecurityStandard {
    None,
    Bits128,
    Bits192,
    Bits256,
}

impl SecurityStandard {
    pub const ALL: [SecurityStandard; 4] = [
        SecurityStandard::None,
        SecurityStandard::Bits128,
        SecurityStandard::Bits192,
        SecurityStandard::Bits256,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SecurityStandard::None => "none",
            SecurityStandard::Bits128 => "bits128",
            SecurityStandard::Bits192 => "bits192",
            SecurityStandard::Bits256 => "bits256",
        }
    }
}

impl fmt::Display for SecurityStandard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SecurityStandard {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" | "notset" => Ok(SecurityStandard::None),
            "bits128" | "128" | "128-bit" => Ok(SecurityStandard::Bits128),
            "bits192" | "192" | "192-bit" => Ok(SecurityStandard::Bits192),
            "bits256" | "256" | "256-bit" => Ok(SecurityStandard::Bits256),
            other => Err(format!("unknown security standard `{other}`")),
        }
    }
}

/// Cryptographic parameter set of one benchmark execution.
///
/// The ring dimension is stored as its base-2 exponent, so `log2_ring_dim = 16`
/// means N = 65536 and at most N/2 = 32768 packed slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CryptoConfig {
    pub log2_ring_dim: u32,
    pub depth: u32,
    pub batch_size: u64,
    pub security_standard: SecurityStandard,
}

impl CryptoConfig {
    pub fn new(log2_ring_dim: u32, depth: u32, batch_size: u64) -> Self {
        CryptoConfig {
            log2_ring_dim,
            depth,
            batch_size,
            security_standard: SecurityStandard::None,
        }
    }

    pub fn with_security(mut self, standard: SecurityStandard) -> Self {
        self.security_standard = standard;
        self
    }

    /// Ring dimension N, or `None` when the exponent does not fit in 64 bits.
    pub fn ring_dim(&self) -> Option<u64> {
        1u64.checked_shl(self.log2_ring_dim)
    }

    /// Upper bound on the slot count, N/2.
    pub fn max_slots(&self) -> Option<u64> {
        self.log2_ring_dim.checked_sub(1).and_then(|e| 1u64.checked_shl(e))
    }

    /// Compact, filesystem-safe label such as `n16-l10-b4096-none`.
    pub fn label(&self) -> String {
        format!(
            "n{}-l{}-b{}-{}",
            self.log2_ring_dim, self.depth, self.batch_size, self.security_standard
        )
    }

    /// Content hash used to key serialized crypto artifacts.
    pub fn cache_key(&self) -> String {
        let digest = Sha256::digest(self.label().as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        validate_config(self)
    }
}

impl fmt::Display for CryptoConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "N=2^{} L={} batch={} sec={}",
            self.log2_ring_dim, self.depth, self.batch_size, self.security_standard
        )
    }
}

/// Partial configuration used to override benchmark defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfigOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log2_ring_dim: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub security_standard: Option<SecurityStandard>,
}

impl ConfigOverrides {
    pub fn is_empty(&self) -> bool {
        *self == ConfigOverrides::default()
    }

    pub fn apply(&self, base: CryptoConfig) -> CryptoConfig {
        CryptoConfig {
            log2_ring_dim: self.log2_ring_dim.unwrap_or(base.log2_ring_dim),
            depth: self.depth.unwrap_or(base.depth),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            security_standard: self.security_standard.unwrap_or(base.security_standard),
        }
    }
}

impl From<CryptoConfig> for ConfigOverrides {
    fn from(c: CryptoConfig) -> Self {
        ConfigOverrides {
            log2_ring_dim: Some(c.log2_ring_dim),
            depth: Some(c.depth),
            batch_size: Some(c.batch_size),
            security_standard: Some(c.security_standard),
        }
    }
}

/// One violated configuration invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub value: String,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {}: {}", self.field, self.value, self.reason)
    }
}

/// Checks every invariant of `config` and reports all violations at once.
pub fn validate_config(config: &CryptoConfig) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    let k = config.log2_ring_dim;
    if k < MIN_LOG2_RING_DIM {
        violations.push(Violation {
            field: "log2_ring_dim",
            value: k.to_string(),
            reason: format!("below sweep floor {MIN_LOG2_RING_DIM}"),
        });
    } else if k > MAX_LOG2_RING_DIM {
        violations.push(Violation {
            field: "log2_ring_dim",
            value: k.to_string(),
            reason: format!("above sweep ceiling {MAX_LOG2_RING_DIM}"),
        });
    }
    if config.depth < 1 {
        violations.push(Violation {
            field: "depth",
            value: config.depth.to_string(),
            reason: "multiplicative depth must be at least 1".into(),
        });
    }
    let batch = config.batch_size;
    if !batch.is_power_of_two() {
        violations.push(Violation {
            field: "batch_size",
            value: batch.to_string(),
            reason: "must be a power of two or 1".into(),
        });
    }
    if let Some(slots) = config.max_slots() {
        if batch > slots {
            violations.push(Violation {
                field: "batch_size",
                value: batch.to_string(),
                reason: format!("batch > N/2 ({slots} slots)"),
            });
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitive_defaults_are_valid() {
        assert!(validate_config(&CryptoConfig::new(16, 10, 1 << 12)).is_ok());
    }

    #[test]
    fn batch_above_half_ring_is_rejected() {
        let v = validate_config(&CryptoConfig::new(13, 10, 1 << 13)).unwrap_err();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "batch_size");
        assert!(v[0].reason.contains("batch > N/2"));
    }

    #[test]
    fn ring_dim_below_floor_is_rejected() {
        let v = validate_config(&CryptoConfig::new(12, 10, 1 << 10)).unwrap_err();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "log2_ring_dim");
        assert_eq!(v[0].value, "12");
        assert!(v[0].reason.contains("13"));
    }

    #[test]
    fn all_violations_are_reported() {
        let v = validate_config(&CryptoConfig::new(20, 0, 3)).unwrap_err();
        let fields: Vec<_> = v.iter().map(|x| x.field).collect();
        assert_eq!(fields, ["log2_ring_dim", "depth", "batch_size"]);
    }

    #[test]
    fn batch_of_one_is_allowed() {
        assert!(validate_config(&CryptoConfig::new(17, 3, 1)).is_ok());
    }

    #[test]
    fn huge_exponent_does_not_overflow() {
        let c = CryptoConfig::new(200, 1, 1);
        assert_eq!(c.ring_dim(), None);
        assert!(validate_config(&c).is_err());
    }

    #[test]
    fn cache_key_is_stable_and_distinguishes_configs() {
        let a = CryptoConfig::new(16, 10, 4096);
        assert_eq!(a.cache_key(), a.cache_key());
        assert_eq!(a.cache_key().len(), 16);
        assert_ne!(a.cache_key(), CryptoConfig::new(16, 11, 4096).cache_key());
    }

    #[test]
    fn security_standard_parses_common_spellings() {
        assert_eq!("128".parse::<SecurityStandard>(), Ok(SecurityStandard::Bits128));
        assert_eq!("none".parse::<SecurityStandard>(), Ok(SecurityStandard::None));
        assert!("512".parse::<SecurityStandard>().is_err());
    }
}
