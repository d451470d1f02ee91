//! Small order statistics shared by the profiler and reports.

/// Median of `values`; an even count yields the midpoint of the two central
/// values. Returns `None` for an empty slice or when any value is NaN.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() || values.iter().any(|v| v.is_nan()) {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        Some(v[mid])
    } else {
        Some(v[mid - 1] + (v[mid] - v[mid - 1]) / 2.0)
    }
}
