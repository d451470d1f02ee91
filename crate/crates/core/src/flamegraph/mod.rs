//! Call-stack folding and flame graph rendering.
//!
//! Samples come from the stack recorder's text dump (see [`parse_perf_script`])
//! and are folded into the `frame;frame;... weight` line format understood by
//! common flame graph tooling.

mod perf_script;
mod svg;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use perf_script::parse_perf_script;
pub use svg::{render_svg, SvgOptions};

pub const SEPARATOR: char = ';';

#[derive(Debug, Error, PartialEq)]
pub enum FlameError {
    #[error("profile is empty; nothing to render")]
    Empty,
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// One call stack, outermost frame first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StackSample {
    pub frames: Vec<String>,
    pub weight: u64,
}

impl StackSample {
    pub fn new<I, S>(frames: I, weight: u64) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        StackSample {
            frames: frames.into_iter().map(|f| sanitize_frame(f.as_ref())).collect(),
            weight,
        }
    }
}

/// Replaces the fold separator and line breaks with `_`.
pub fn sanitize_frame(frame: &str) -> String {
    frame
        .chars()
        .map(|c| {
            if c == SEPARATOR || c == '\n' || c == '\r' {
                '_'
            } else {
                c
            }
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldedProfile {
    pub lines: BTreeMap<String, u64>,
    pub total_weight: u64,
}

/// Merges samples with identical frame paths. Samples with no frames or zero
/// weight carry no information and are skipped.
pub fn ingest<I>(samples: I) -> Result<FoldedProfile, FlameError>
where
    I: IntoIterator<Item = StackSample>,
{
    let mut profile = FoldedProfile::default();
    for s in samples {
        if s.frames.is_empty() || s.weight == 0 {
            continue;
        }
        let path = s.frames.iter().map(|f| sanitize_frame(f)).collect::<Vec<_>>().join(";");
        *profile.lines.entry(path).or_insert(0) += s.weight;
        profile.total_weight += s.weight;
    }
    if profile.lines.is_empty() {
        return Err(FlameError::Empty);
    }
    Ok(profile)
}

impl FoldedProfile {
    /// `path weight` lines, sorted by path, newline-terminated.
    pub fn to_folded_text(&self) -> String {
        let mut out = String::new();
        for (path, w) in &self.lines {
            writeln!(out, "{path} {w}").unwrap();
        }
        out
    }

    /// Parses the folded-line format back into a profile.
    pub fn from_folded_text(text: &str) -> Result<Self, FlameError> {
        let mut samples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let (path, weight) = line.rsplit_once(' ').ok_or_else(|| FlameError::Parse {
                line: i + 1,
                message: "expected `path weight`".into(),
            })?;
            let weight: u64 = weight.parse().map_err(|_| FlameError::Parse {
                line: i + 1,
                message: format!("bad weight `{weight}`"),
            })?;
            samples.push(StackSample {
                frames: path.split(SEPARATOR).map(str::to_string).collect(),
                weight,
            });
        }
        ingest(samples)
    }

    /// Functions ranked by inclusive share of samples. A function appearing
    /// several times on one path (recursion) counts once for that path.
    pub fn top_functions(&self, k: usize) -> Result<Vec<(String, f64)>, FlameError> {
        if k < 1 {
            return Err(FlameError::Argument("k must be at least 1".into()));
        }
        if self.total_weight == 0 {
            return Err(FlameError::Empty);
        }
        let mut inclusive: BTreeMap<&str, u64> = BTreeMap::new();
        for (path, &w) in &self.lines {
            let unique: BTreeSet<&str> = path.split(SEPARATOR).collect();
            for f in unique {
                *inclusive.entry(f).or_insert(0) += w;
            }
        }
        let total = self.total_weight as f64;
        let mut ranked: Vec<(String, f64)> = inclusive
            .into_iter()
            .map(|(f, w)| (f.to_string(), w as f64 / total))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(k);
        Ok(ranked)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn merge_by_path() {
        let p = ingest([
            StackSample::new(["main", "f", "g"], 1),
            StackSample::new(["main", "f", "h"], 1),
            StackSample::new(["main", "f", "g"], 1),
        ])
        .unwrap();
        assert_eq!(p.total_weight, 3);
        assert_eq!(p.lines["main;f;g"], 2);
        assert_eq!(p.lines["main;f;h"], 1);
        assert_eq!(p.to_folded_text(), "main;f;g 2\nmain;f;h 1\n");
    }

    #[test]
    fn single_sample() {
        let p = ingest([StackSample::new(["main"], 1)]).unwrap();
        assert_eq!(p.lines.len(), 1);
        assert_eq!(p.total_weight, 1);
    }

    #[test]
    fn separator_is_sanitized() {
        let p = ingest([StackSample::new(["main", "a;b", "c\nd"], 1)]).unwrap();
        assert!(p.lines.contains_key("main;a_b;c_d"));
    }

    #[test]
    fn empty_stream_is_an_error() {
        assert_eq!(ingest(Vec::new()), Err(FlameError::Empty));
    }

    #[test]
    fn folded_text_round_trips() {
        let p = ingest([StackSample::new(["a", "b c"], 4), StackSample::new(["a"], 1)]).unwrap();
        assert_eq!(FoldedProfile::from_folded_text(&p.to_folded_text()).unwrap(), p);
        assert!(FoldedProfile::from_folded_text("a;b x\n").is_err());
    }

    #[test]
    fn hot_function_ranked_first() {
        let p = ingest([
            StackSample::new(["app", "main", "EvalMult", "NTT"], 60),
            StackSample::new(["app", "main", "EvalMult"], 30),
            StackSample::new(["app", "main", "EvalAdd"], 10),
        ])
        .unwrap();
        let top = p.top_functions(10).unwrap();
        assert_eq!(top[0], ("app".into(), 1.0));
        assert_eq!(top[1], ("main".into(), 1.0));
        assert_eq!(top[2], ("EvalMult".into(), 0.9));
        assert!(top.iter().all(|(f, _)| f != "Bootstrap"));
        assert_eq!(p.top_functions(1).unwrap().len(), 1);
        assert!(p.top_functions(0).is_err());
    }

    #[test]
    fn recursion_counts_once_per_path() {
        let p = ingest([
            StackSample::new(["main", "f", "f", "f"], 2),
            StackSample::new(["main"], 2),
        ])
        .unwrap();
        let top = p.top_functions(5).unwrap();
        assert_eq!(top[1], ("f".into(), 0.5));
    }

    proptest! {
        #[test]
        fn weight_is_conserved(paths in prop::collection::vec(
            (prop::collection::vec("[a-d;]{1,3}", 1..5), 1u64..10), 1..40)) {
            let samples: Vec<_> = paths.iter().map(|(f, w)| StackSample::new(f, *w)).collect();
            let expected: u64 = samples.iter().map(|s| s.weight).sum();
            let p = ingest(samples).unwrap();
            prop_assert_eq!(p.total_weight, expected);
            prop_assert_eq!(p.lines.values().sum::<u64>(), expected);
            for (f, frac) in p.top_functions(100).unwrap() {
                prop_assert!((0.0..=1.0).contains(&frac), "{} {}", f, frac);
            }
        }
    }
}
