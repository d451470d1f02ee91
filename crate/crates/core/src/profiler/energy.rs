use std::fs;
use std::path::{Path, PathBuf};

use super::ProfileError;

/// Cumulative package-domain energy counter.
pub trait EnergyMeter: Send + Sync {
    /// Joules accumulated since an arbitrary origin; wraps at
    /// [`EnergyMeter::range_joules`].
    fn read_joules(&self) -> Result<f64, ProfileError>;
    fn range_joules(&self) -> f64;

    /// Energy spent between two reads, correcting one wraparound.
    fn between(&self, before: f64, after: f64) -> f64 {
        energy_delta(before, after, self.range_joules())
    }
}

pub fn energy_delta(before: f64, after: f64, range: f64) -> f64 {
    if after >= before {
        after - before
    } else {
        after + range - before
    }
}

/// RAPL package domain exposed through the powercap sysfs tree.
#[derive(Debug, Clone)]
pub struct RaplPackage {
    dir: PathBuf,
    range_uj: u64,
}

const POWERCAP_ROOT: &str = "/sys/class/powercap";

impl RaplPackage {
    /// Finds the first `package-*` zone under the powercap tree.
    pub fn discover() -> Result<Self, ProfileError> {
        Self::discover_in(Path::new(POWERCAP_ROOT))
    }

    pub fn discover_in(root: &Path) -> Result<Self, ProfileError> {
        let entries = fs::read_dir(root)
            .map_err(|e| ProfileError::Capability(format!("no energy interface at {}: {e}", root.display())))?;
        let mut zones: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                fs::read_to_string(p.join("name"))
                    .map(|n| n.trim().starts_with("package"))
                    .unwrap_or(false)
            })
            .collect();
        zones.sort();
        let dir = zones
            .into_iter()
            .next()
            .ok_or_else(|| ProfileError::Capability(format!("no RAPL package zone under {}", root.display())))?;
        Self::at(&dir)
    }

    pub fn at(dir: &Path) -> Result<Self, ProfileError> {
        let range_uj = read_u64(&dir.join("max_energy_range_uj"))?;
        let meter = RaplPackage {
            dir: dir.to_path_buf(),
            range_uj,
        };
        meter.read_joules()?;
        Ok(meter)
    }
}

fn read_u64(path: &Path) -> Result<u64, ProfileError> {
    let text = fs::read_to_string(path).map_err(|e| ProfileError::Capability(format!("{}: {e}", path.display())))?;
    text.trim()
        .parse()
        .map_err(|e| ProfileError::Capability(format!("{}: {e}", path.display())))
}

impl EnergyMeter for RaplPackage {
    fn read_joules(&self) -> Result<f64, ProfileError> {
        Ok(read_u64(&self.dir.join("energy_uj"))? as f64 * 1e-6)
    }

    fn range_joules(&self) -> f64 {
        // the counter takes values in [0, max_energy_range_uj]
        (self.range_uj as f64 + 1.0) * 1e-6
    }
}
