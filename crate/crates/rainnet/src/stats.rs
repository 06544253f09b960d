//! Small shared statistics helpers.

/// Nearest-rank percentile: the value at 1-based index `ceil(p/100 * n)` of
/// an ascending sample. Deterministic, no interpolation. `p` must lie in
/// (0, 100] and the slice must be non-empty and sorted.
pub fn nearest_rank(sorted_ascending: &[f64], percentile: f64) -> f64 {
    debug_assert!(!sorted_ascending.is_empty());
    debug_assert!(percentile > 0.0 && percentile <= 100.0);
    let n = sorted_ascending.len();
    let rank = ((percentile / 100.0) * n as f64).ceil() as usize;
    sorted_ascending[rank.clamp(1, n) - 1]
}
