//! Human-readable reports over the results store. Missing inputs are listed
//! as gaps; no value is ever filled in.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::execute::load_denoised;
use super::store::{ResultStore, RowFilter, RowKind};
use super::OrchestratorError;
use crate::model::CostKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportKind {
    /// ROI, setup overhead and event-profiling overhead per point.
    Overhead,
    /// Measured profiling time against model evaluation time.
    Prediction,
    /// Per-primitive cost against thread count, one CSV per primitive and
    /// configuration.
    Series,
}

impl std::str::FromStr for ReportKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "overhead" => Ok(ReportKind::Overhead),
            "prediction" => Ok(ReportKind::Prediction),
            "series" => Ok(ReportKind::Series),
            other => Err(format!("unknown report kind `{other}` (overhead, prediction, series)")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub text: String,
    pub gaps: Vec<String>,
    pub files: Vec<PathBuf>,
}

impl Report {
    pub fn render(&self) -> String {
        let mut s = self.text.clone();
        if !self.gaps.is_empty() {
            s.push_str("gaps:\n");
            for g in &self.gaps {
                let _ = writeln!(s, "  - {g}");
            }
        }
        for f in &self.files {
            let _ = writeln!(s, "wrote {}", f.display());
        }
        s
    }
}

/// Percent with two decimals below 10 and one decimal above.
pub fn fmt_percent(p: f64) -> String {
    if p.abs() < 10.0 {
        format!("{p:.2}%")
    } else {
        format!("{p:.1}%")
    }
}

/// Seconds with three significant digits below 1 s.
pub fn fmt_seconds(t: f64) -> String {
    if t >= 100.0 {
        format!("{t:.1}")
    } else if t >= 1.0 {
        format!("{t:.2}")
    } else if t > 0.0 {
        let digits = (2 - t.log10().floor() as i32).max(0) as usize;
        format!("{t:.digits$}")
    } else {
        format!("{t}")
    }
}

pub fn fmt_speedup(s: f64) -> String {
    format!("{s:.1}×")
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (i, c) in r.iter().enumerate() {
            width[i] = width[i].max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, c) in cells.iter().enumerate() {
            let pad = width[i] - c.chars().count();
            if i == 0 {
                s.push_str(c);
                s.push_str(&" ".repeat(pad));
            } else {
                s.push_str(" | ");
                s.push_str(&" ".repeat(pad));
                s.push_str(c);
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    out.push_str(&"-".repeat(width.iter().sum::<usize>() + 3 * (width.len() - 1)));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}

pub fn report(store: &ResultStore, kind: ReportKind, out_dir: Option<&Path>) -> Result<Report, OrchestratorError> {
    match kind {
        ReportKind::Overhead => overhead(store),
        ReportKind::Prediction => prediction(store),
        ReportKind::Series => series(store, out_dir.unwrap_or(&store.root().join("series"))),
    }
}

fn overhead(store: &ResultStore) -> Result<Report, OrchestratorError> {
    let mut rep = Report::default();
    let rows = load_denoised(store, &RowFilter::default())?;
    if rows.is_empty() {
        rep.gaps.push("store holds no denoised measurements".into());
        return Ok(rep);
    }
    let mut body = Vec::new();
    for (point, m, row) in &rows {
        let roi = m.roi_time;
        if !(roi > 0.0) {
            rep.gaps.push(format!("{point}: ROI is zero; overheads undefined"));
            continue;
        }
        let setup = format!("{:.2} ({})", m.setup_time, fmt_percent(100.0 * m.setup_time / roi));
        let event = match row.f64("event_full_time")? {
            Some(ef) => {
                let extra = ef - m.full_time;
                format!("{extra:.2} ({})", fmt_percent(100.0 * extra / roi))
            }
            None => {
                rep.gaps.push(format!("{point}: no event-profiling pass"));
                "n/a".into()
            }
        };
        body.push(vec![point.clone(), format!("{roi:.2}"), setup, event]);
    }
    rep.text = table(
        &["Point", "ROI (s)", "Runtime analysis (Δ%)", "Event profiling (Δ%)"],
        &body,
    );
    Ok(rep)
}

fn prediction(store: &ResultStore) -> Result<Report, OrchestratorError> {
    let mut rep = Report::default();
    let preds = store.load(RowKind::Prediction, &RowFilter::default())?;
    if preds.is_empty() {
        rep.gaps.push("store holds no predictions".into());
        return Ok(rep);
    }
    let mut latest: BTreeMap<(String, CostKey), f64> = BTreeMap::new();
    for p in &preds {
        let elapsed = p
            .f64("prediction_seconds")?
            .ok_or_else(|| OrchestratorError::Schema("prediction row lacks prediction_seconds".into()))?;
        latest.insert((p.benchmark().to_string(), p.key()?), elapsed);
    }
    let measured = load_denoised(store, &RowFilter::default())?;
    let mut body = Vec::new();
    for ((bench, key), elapsed) in latest {
        let m = measured
            .iter()
            .rev()
            .find(|(_, m, _)| m.benchmark == bench && m.config == key.config && m.thread_count == key.thread_count);
        let Some((_, m, _)) = m else {
            rep.gaps
                .push(format!("{bench} at {key}: no measured runtime; speedup not computed"));
            continue;
        };
        if !(elapsed > 0.0) {
            rep.gaps.push(format!("{bench} at {key}: zero prediction time"));
            continue;
        }
        body.push(vec![
            format!("{bench} ({key})"),
            fmt_seconds(m.full_time),
            fmt_seconds(elapsed),
            fmt_speedup(m.full_time / elapsed),
        ]);
    }
    rep.text = table(&["Benchmark", "Profiling (s)", "Prediction (s)", "Speedup"], &body);
    Ok(rep)
}

fn series(store: &ResultStore, out_dir: &Path) -> Result<Report, OrchestratorError> {
    let mut rep = Report::default();
    let rows = load_denoised(store, &RowFilter::default())?;
    type Series = Vec<(u32, f64, Option<f64>)>;
    let mut groups: BTreeMap<(String, String), Series> = BTreeMap::new();
    for (_, m, _) in &rows {
        if let Some(t) = m.per_call_time {
            groups
                .entry((m.benchmark.clone(), m.config.label()))
                .or_default()
                .push((m.thread_count, t, m.per_call_energy));
        }
    }
    if groups.is_empty() {
        rep.gaps.push("store holds no per-call primitive measurements".into());
        return Ok(rep);
    }
    std::fs::create_dir_all(out_dir).map_err(|source| OrchestratorError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    for ((bench, label), mut pts) in groups {
        pts.sort_by_key(|p| p.0);
        let mut csv = String::from("thread_count,per_call_time,per_call_energy\n");
        for (t, time, energy) in pts {
            let _ = writeln!(
                csv,
                "{t},{time:?},{}",
                energy.map_or(String::new(), |e| format!("{e:?}"))
            );
        }
        let path = out_dir.join(format!("{}-{label}.csv", crate::runner::sanitize(&bench)));
        std::fs::write(&path, csv).map_err(|source| OrchestratorError::Io {
            path: path.clone(),
            source,
        })?;
        rep.files.push(path);
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_formats() {
        assert_eq!(fmt_percent(0.3937), "0.39%");
        assert_eq!(fmt_percent(60.78), "60.8%");
        assert_eq!(fmt_seconds(253.2), "253.2");
        assert_eq!(fmt_seconds(2.05), "2.05");
        assert_eq!(fmt_seconds(0.6), "0.600");
        assert_eq!(fmt_seconds(0.000123456), "0.000123");
        assert_eq!(fmt_speedup(253.2 / 0.6), "422.0×");
    }

    #[test]
    fn empty_store_reports_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let store = ResultStore::open(dir.path()).unwrap();
        for kind in [ReportKind::Overhead, ReportKind::Prediction, ReportKind::Series] {
            let r = report(&store, kind, None).unwrap();
            assert!(r.text.is_empty());
            assert_eq!(r.gaps.len(), 1);
        }
    }
}
