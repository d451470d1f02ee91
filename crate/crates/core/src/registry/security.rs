use std::collections::BTreeMap;

use serde::Deserialize;

use super::{RegistryError, SecurityStandard, MAX_LOG2_RING_DIM, MIN_LOG2_RING_DIM};

/// Caps a security standard imposes, keyed by ring-dimension exponent.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SecurityRule {
    pub max_log2_qp: BTreeMap<u32, u32>,
    pub max_depth: BTreeMap<u32, u32>,
}

impl SecurityRule {
    /// Smallest supported ring-dimension exponent admitting `depth`.
    pub fn min_log2_ring_dim(&self, depth: u32) -> Option<u32> {
        (MIN_LOG2_RING_DIM..=MAX_LOG2_RING_DIM)
            .find(|k| self.max_depth.get(k).is_some_and(|&cap| cap >= depth && cap > 0))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SecurityTables {
    rules: BTreeMap<SecurityStandard, SecurityRule>,
}

impl SecurityTables {
    pub fn parse(text: &str, origin: &str) -> Result<Self, RegistryError> {
        #[derive(Deserialize)]
        struct RawRule {
            #[serde(default)]
            max_log2_qp: BTreeMap<String, u32>,
            max_depth: BTreeMap<String, u32>,
        }
        let perr = |message: String| RegistryError::Parse {
            origin: origin.to_string(),
            message,
        };
        let raw: BTreeMap<String, RawRule> = toml::from_str(text).map_err(|e| perr(e.to_string()))?;
        let keyed = |m: BTreeMap<String, u32>| -> Result<BTreeMap<u32, u32>, RegistryError> {
            m.into_iter()
                .map(|(k, v)| {
                    k.parse::<u32>()
                        .map(|k| (k, v))
                        .map_err(|_| perr(format!("ring exponent key `{k}` is not an integer")))
                })
                .collect()
        };
        let mut rules = BTreeMap::new();
        for (name, r) in raw {
            let standard: SecurityStandard = name.parse().map_err(perr)?;
            rules.insert(
                standard,
                SecurityRule {
                    max_log2_qp: keyed(r.max_log2_qp)?,
                    max_depth: keyed(r.max_depth)?,
                },
            );
        }
        Ok(SecurityTables { rules })
    }

    pub fn rule(&self, standard: SecurityStandard) -> Option<&SecurityRule> {
        self.rules.get(&standard)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE: &str = include_str!("../../data/security.toml");

    #[test]
    fn builtin_table_has_three_standards() {
        let t = SecurityTables::parse(TABLE, "security.toml").unwrap();
        for s in [
            SecurityStandard::Bits128,
            SecurityStandard::Bits192,
            SecurityStandard::Bits256,
        ] {
            assert!(t.rule(s).is_some(), "{s}");
        }
        assert!(t.rule(SecurityStandard::None).is_none());
    }

    #[test]
    fn stricter_standards_need_larger_rings() {
        let t = SecurityTables::parse(TABLE, "security.toml").unwrap();
        let n = |s| t.rule(s).unwrap().min_log2_ring_dim(10).unwrap();
        assert!(n(SecurityStandard::Bits128) <= n(SecurityStandard::Bits192));
        assert!(n(SecurityStandard::Bits192) <= n(SecurityStandard::Bits256));
    }

    #[test]
    fn zero_cap_never_qualifies() {
        let t = SecurityTables::parse("[bits256]\nmax_depth = { 13 = 0, 14 = 2 }\n", "x").unwrap();
        assert_eq!(
            t.rule(SecurityStandard::Bits256).unwrap().min_log2_ring_dim(1),
            Some(14)
        );
    }

    #[test]
    fn bad_key_is_a_parse_error() {
        let err = SecurityTables::parse("[bits128]\nmax_depth = { x = 1 }\n", "x").unwrap_err();
        assert!(err.to_string().contains("not an integer"));
    }
}
