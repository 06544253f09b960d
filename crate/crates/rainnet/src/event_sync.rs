//! Event extraction and the event-synchronization network.
//!
//! Two nodes synchronize when rainfall events at one closely follow events
//! at the other, "closely" being half the smaller of the local inter-event
//! gaps. Pairwise strengths are computed for every unordered node pair and
//! thresholded at a percentile of the positive values to produce each
//! season's edge set.
//!
//! The pairwise kernel works in doubled integer counts (a coincidence at
//! zero lag contributes 1 instead of 1/2), so counts are exact and
//! symmetry holds bit-for-bit. Pair results are keyed by `(i, j)`, never
//! by completion order, so graphs are identical across thread counts.

use thiserror::Error;

use crate::grid::{Edge, EventSeries, GridPoint, SpatialGraph, SEASON_DAYS};
use crate::stats::nearest_rank;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Default percentile of positive synchronization strengths used as the
/// edge threshold. Calibrated so a full-scale (4827-node) synthetic season
/// lands in the expected 75k-85k edge band; always overridable.
pub const DEFAULT_EDGE_PERCENTILE: f64 = 99.3;

#[derive(Debug, Clone, PartialEq)]
pub struct ESConfig {
    /// Rainfall cutoff in mm; a day is an event when rainfall is strictly
    /// above this.
    pub event_threshold_mm: f64,
    /// Percentile of the positive strength distribution used as the edge
    /// threshold.
    pub q_edge_percentile: f64,
    /// Nodes with fewer events than this get no edges.
    pub min_events: usize,
    /// Optional cap on the coincidence window, in days.
    pub tau_max_days: Option<f64>,
}

impl Default for ESConfig {
    fn default() -> Self {
        Self {
            event_threshold_mm: 1.0,
            q_edge_percentile: DEFAULT_EDGE_PERCENTILE,
            min_events: 3,
            tau_max_days: None,
        }
    }
}

impl ESConfig {
    pub fn validate(&self) -> Result<(), EsError> {
        if self.event_threshold_mm < 0.0 || !self.event_threshold_mm.is_finite() {
            return Err(EsError::BadConfig("event_threshold_mm must be finite and >= 0"));
        }
        if !(self.q_edge_percentile > 0.0 && self.q_edge_percentile < 100.0) {
            return Err(EsError::BadConfig("q_edge_percentile must lie in (0, 100)"));
        }
        if self.min_events < 2 {
            return Err(EsError::BadConfig("min_events must be >= 2"));
        }
        if let Some(t) = self.tau_max_days {
            if t <= 0.0 || !t.is_finite() {
                return Err(EsError::BadConfig("tau_max_days must be finite and > 0"));
            }
        }
        Ok(())
    }
}

/// Pairwise synchronization between nodes `i` and `j`: the directional
/// coincidence counts and the normalized strength `q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncResult {
    pub i: usize,
    pub j: usize,
    pub c_ij: f64,
    pub c_ji: f64,
    pub q: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum EsError {
    #[error("invalid config: {0}")]
    BadConfig(&'static str),
    #[error("node {node} series has {len} days, expected {expected}")]
    WrongSeriesLength { node: usize, len: usize, expected: usize },
    #[error("non-finite rainfall at node {node}, day {day}")]
    NonFiniteRainfall { node: usize, day: usize },
    #[error("events and points are misaligned: {events} series vs {points} points")]
    MisalignedInputs { events: usize, points: usize },
    #[error("no events in any series; cannot build a graph")]
    EmptyEventSet,
    #[error("all pairwise strengths are zero; no edges derivable")]
    AllZeroSync,
    #[error(transparent)]
    Grid(#[from] crate::grid::GridError),
}

/// Extracts wet-day events: day indices where rainfall is strictly above
/// the threshold. Every series must cover exactly the 122-day season.
pub fn extract_events(
    daily_rainfall: &[Vec<f64>],
    config: &ESConfig,
) -> Result<Vec<EventSeries>, EsError> {
    config.validate()?;
    let mut out = Vec::with_capacity(daily_rainfall.len());
    for (node, series) in daily_rainfall.iter().enumerate() {
        if series.len() != SEASON_DAYS {
            return Err(EsError::WrongSeriesLength {
                node,
                len: series.len(),
                expected: SEASON_DAYS,
            });
        }
        let mut times = Vec::new();
        for (day, &mm) in series.iter().enumerate() {
            if !mm.is_finite() {
                return Err(EsError::NonFiniteRainfall { node, day });
            }
            if mm > config.event_threshold_mm {
                times.push(day as u32);
            }
        }
        out.push(EventSeries::new(node, times)?);
    }
    Ok(out)
}

/// Effective inter-event gap at each event: the smaller adjacent gap for
/// interior events, the single available gap at the boundaries. Lengths 0
/// and 1 yield no usable gaps.
fn effective_gaps(times: &[u32]) -> Vec<u32> {
    let n = times.len();
    if n < 2 {
        return vec![];
    }
    let mut gaps = Vec::with_capacity(n);
    for l in 0..n {
        let back = if l > 0 { Some(times[l] - times[l - 1]) } else { None };
        let fwd = if l + 1 < n { Some(times[l + 1] - times[l]) } else { None };
        gaps.push(match (back, fwd) {
            (Some(b), Some(f)) => b.min(f),
            (Some(b), None) => b,
            (None, Some(f)) => f,
            (None, None) => unreachable!(),
        });
    }
    gaps
}

/// Doubled directional coincidence counts between two sorted event series.
/// A zero-lag coincidence contributes 1 to each direction; an ordered
/// coincidence within the adaptive window contributes 2 to its direction.
fn coincidence_counts2(
    a_times: &[u32],
    b_times: &[u32],
    a_gaps: &[u32],
    b_gaps: &[u32],
    tau_max: Option<f64>,
) -> (u64, u64) {
    let mut c2_ab = 0u64; // events at a following events at b
    let mut c2_ba = 0u64;
    if a_times.len() < 2 || b_times.len() < 2 {
        return (0, 0);
    }
    for (l, &ta) in a_times.iter().enumerate() {
        // J != 0 needs 2|dt| <= min(gap_a, gap_b) <= gap_a, so only b
        // events within half this event's gap can contribute.
        let radius = (a_gaps[l] / 2) as i64;
        let ta = ta as i64;
        let lo = b_times.partition_point(|&tb| (tb as i64) < ta - radius);
        for m in lo..b_times.len() {
            let tb = b_times[m] as i64;
            let dt = ta - tb;
            if dt < -radius {
                break;
            }
            if dt == 0 {
                c2_ab += 1;
                c2_ba += 1;
                continue;
            }
            let window2 = a_gaps[l].min(b_gaps[m]) as i64; // 2 * s_lm
            let within_tau = tau_max.map_or(true, |t| (dt.abs() as f64) <= t);
            if 2 * dt.abs() <= window2 && within_tau {
                if dt > 0 {
                    c2_ab += 2;
                } else {
                    c2_ba += 2;
                }
            }
        }
    }
    (c2_ab, c2_ba)
}

/// Synchronization strength between two nodes. Below `min_events` on
/// either side the result is zero. Exactly symmetric under argument swap,
/// and exactly 1 for a series against itself.
pub fn sync_pair(a: &EventSeries, b: &EventSeries, config: &ESConfig) -> SyncResult {
    let (i, j) = (a.node_id, b.node_id);
    if a.count() < config.min_events || b.count() < config.min_events {
        return SyncResult { i, j, c_ij: 0.0, c_ji: 0.0, q: 0.0 };
    }
    let a_gaps = effective_gaps(a.times());
    let b_gaps = effective_gaps(b.times());
    let (c2_ab, c2_ba) =
        coincidence_counts2(a.times(), b.times(), &a_gaps, &b_gaps, config.tau_max_days);
    let norm = ((a.count() * b.count()) as f64).sqrt();
    let q = (c2_ab + c2_ba) as f64 / (2.0 * norm);
    SyncResult { i, j, c_ij: c2_ab as f64 / 2.0, c_ji: c2_ba as f64 / 2.0, q }
}

/// All unordered pairs with both endpoints at or above `min_events`,
/// ordered by `(i, j)`.
fn participating_pairs(events: &[EventSeries], config: &ESConfig) -> Vec<(usize, usize)> {
    let active: Vec<usize> = events
        .iter()
        .enumerate()
        .filter(|(_, e)| e.count() >= config.min_events)
        .map(|(i, _)| i)
        .collect();
    let mut pairs = Vec::with_capacity(active.len() * active.len().saturating_sub(1) / 2);
    for (ai, &i) in active.iter().enumerate() {
        for &j in &active[ai + 1..] {
            pairs.push((i, j));
        }
    }
    pairs
}

/// Sequential pairwise sweep. Always available; used directly for small
/// inputs and as the reference path in benchmarks.
pub fn sync_matrix_seq(events: &[EventSeries], config: &ESConfig) -> Vec<SyncResult> {
    participating_pairs(events, config)
        .iter()
        .map(|&(i, j)| sync_pair(&events[i], &events[j], config))
        .collect()
}

/// Pairwise sweep over all participating pairs, parallel when the
/// `parallel` feature is enabled. Output order is by `(i, j)` regardless
/// of scheduling.
pub fn sync_matrix(events: &[EventSeries], config: &ESConfig) -> Vec<SyncResult> {
    #[cfg(feature = "parallel")]
    {
        participating_pairs(events, config)
            .par_iter()
            .map(|&(i, j)| sync_pair(&events[i], &events[j], config))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        sync_matrix_seq(events, config)
    }
}

/// Computes pairwise strengths, thresholds them at the configured
/// percentile of the positive values (nearest rank), and returns the
/// season's graph. Edges at or above the threshold are retained.
pub fn build_graph(
    events: &[EventSeries],
    points: &[GridPoint],
    config: &ESConfig,
    year_label: i32,
) -> Result<SpatialGraph, EsError> {
    config.validate()?;
    if events.len() != points.len() {
        return Err(EsError::MisalignedInputs { events: events.len(), points: points.len() });
    }
    for (idx, e) in events.iter().enumerate() {
        if e.node_id != idx {
            return Err(EsError::MisalignedInputs { events: events.len(), points: points.len() });
        }
    }
    if events.iter().all(|e| e.count() == 0) {
        return Err(EsError::EmptyEventSet);
    }

    let results = sync_matrix(events, config);

    let mut positive: Vec<f64> = results.iter().map(|r| r.q).filter(|&q| q > 0.0).collect();
    if positive.is_empty() {
        return Err(EsError::AllZeroSync);
    }
    positive.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let theta = nearest_rank(&positive, config.q_edge_percentile);

    let edges: Vec<Edge> = results
        .iter()
        .filter(|r| r.q > 0.0 && r.q >= theta)
        .map(|r| Edge { i: r.i, j: r.j, q: r.q })
        .collect();

    Ok(SpatialGraph::new(points.to_vec(), edges, year_label)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(id: usize, times: &[u32]) -> EventSeries {
        EventSeries::new(id, times.to_vec()).unwrap()
    }

    fn rain(days: &[(usize, f64)]) -> Vec<f64> {
        let mut v = vec![0.0; SEASON_DAYS];
        for &(d, mm) in days {
            v[d] = mm;
        }
        v
    }

    #[test]
    fn events_are_days_strictly_above_threshold() {
        let mut daily = vec![0.0; SEASON_DAYS];
        daily[0] = 0.0;
        daily[1] = 2.5;
        daily[2] = 0.5;
        daily[3] = 3.0;
        let ev = extract_events(&[daily], &ESConfig::default()).unwrap();
        assert_eq!(ev[0].times(), &[1, 3]);
    }

    #[test]
    fn all_zero_series_has_no_events() {
        let ev = extract_events(&[vec![0.0; SEASON_DAYS]], &ESConfig::default()).unwrap();
        assert_eq!(ev[0].count(), 0);
    }

    #[test]
    fn threshold_is_strict() {
        let ev = extract_events(&[vec![1.0; SEASON_DAYS]], &ESConfig::default()).unwrap();
        assert_eq!(ev[0].count(), 0);
    }

    #[test]
    fn wrong_length_rejected() {
        let err = extract_events(&[vec![0.0; 5]], &ESConfig::default()).unwrap_err();
        assert_eq!(err, EsError::WrongSeriesLength { node: 0, len: 5, expected: SEASON_DAYS });
    }

    #[test]
    fn identical_series_score_exactly_one() {
        let cfg = ESConfig::default();
        let a = series(0, &[5, 20, 40]);
        let b = series(1, &[5, 20, 40]);
        let r = sync_pair(&a, &b, &cfg);
        assert_eq!(r.c_ij, 1.5);
        assert_eq!(r.c_ji, 1.5);
        assert_eq!(r.q, 1.0);
        let r2 = sync_pair(&b, &a, &cfg);
        assert_eq!(r2.q, 1.0);
    }

    #[test]
    fn below_min_events_short_circuits_to_zero() {
        let cfg = ESConfig::default();
        let a = series(0, &[10]);
        let b = series(1, &[100]);
        let r = sync_pair(&a, &b, &cfg);
        assert_eq!(r.q, 0.0);
    }

    #[test]
    fn self_sync_is_one_for_any_series_at_min_events() {
        let cfg = ESConfig::default();
        for times in [vec![0, 1, 2], vec![3, 50, 51, 120], vec![0, 30, 60, 90, 121]] {
            let a = series(0, &times);
            assert_eq!(sync_pair(&a, &a, &cfg).q, 1.0, "times {times:?}");
        }
    }

    #[test]
    fn ordered_coincidence_within_window_counts_one_direction() {
        let cfg = ESConfig::default();
        // gaps of 10 around each event; dt = 1 <= s = 5
        let a = series(0, &[11, 21, 31]);
        let b = series(1, &[10, 20, 30]);
        let r = sync_pair(&a, &b, &cfg);
        assert_eq!(r.c_ij, 3.0); // all a events trail b events by 1 day
        assert_eq!(r.c_ji, 0.0);
        assert_eq!(r.q, 3.0 / 3.0);
        let swapped = sync_pair(&b, &a, &cfg);
        assert_eq!(swapped.q, r.q);
        assert_eq!(swapped.c_ij, 0.0);
        assert_eq!(swapped.c_ji, 3.0);
    }

    #[test]
    fn tau_cap_disables_wide_coincidences() {
        let mut cfg = ESConfig::default();
        let a = series(0, &[12, 32, 52]);
        let b = series(1, &[10, 30, 50]);
        assert!(sync_pair(&a, &b, &cfg).q > 0.0);
        cfg.tau_max_days = Some(1.0);
        assert_eq!(sync_pair(&a, &b, &cfg).q, 0.0);
    }

    #[test]
    fn single_positive_pair_survives_thresholding() {
        let cfg = ESConfig { q_edge_percentile: 50.0, ..ESConfig::default() };
        let points: Vec<GridPoint> = (0..3)
            .map(|id| GridPoint { id, lat: id as f64, lon: 0.0 })
            .collect();
        // nodes 0 and 1 share event days; node 2 is far away in time
        let daily = vec![
            rain(&[(10, 5.0), (20, 5.0), (30, 5.0)]),
            rain(&[(10, 5.0), (20, 5.0), (30, 5.0)]),
            rain(&[(60, 5.0), (80, 5.0), (100, 5.0)]),
        ];
        let events = extract_events(&daily, &cfg).unwrap();
        let g = build_graph(&events, &points, &cfg, 2001).unwrap();
        assert_eq!(g.edges().len(), 1);
        assert_eq!((g.edges()[0].i, g.edges()[0].j), (0, 1));
        assert_eq!(g.edges()[0].q, 1.0);
    }

    #[test]
    fn empty_event_set_is_an_error() {
        let cfg = ESConfig::default();
        let points = vec![GridPoint { id: 0, lat: 0.0, lon: 0.0 }];
        let events = vec![series(0, &[])];
        assert_eq!(build_graph(&events, &points, &cfg, 2001).unwrap_err(), EsError::EmptyEventSet);
    }

    #[test]
    fn no_positive_sync_is_an_error() {
        let cfg = ESConfig::default();
        let points: Vec<GridPoint> = (0..2)
            .map(|id| GridPoint { id, lat: id as f64, lon: 0.0 })
            .collect();
        let daily = vec![
            rain(&[(0, 5.0), (40, 5.0), (80, 5.0)]),
            rain(&[(20, 5.0), (60, 5.0), (100, 5.0)]),
        ];
        let events = extract_events(&daily, &cfg).unwrap();
        assert_eq!(build_graph(&events, &points, &cfg, 2001).unwrap_err(), EsError::AllZeroSync);
    }

    #[test]
    fn raising_percentile_never_adds_edges() {
        let points: Vec<GridPoint> = (0..6)
            .map(|id| GridPoint { id, lat: id as f64, lon: 0.0 })
            .collect();
        let daily = vec![
            rain(&[(10, 5.0), (20, 5.0), (30, 5.0), (40, 5.0)]),
            rain(&[(10, 5.0), (20, 5.0), (30, 5.0), (41, 5.0)]),
            rain(&[(10, 5.0), (21, 5.0), (30, 5.0), (50, 5.0)]),
            rain(&[(11, 5.0), (20, 5.0), (35, 5.0), (50, 5.0)]),
            rain(&[(10, 5.0), (25, 5.0), (30, 5.0), (60, 5.0)]),
            rain(&[(15, 5.0), (26, 5.0), (37, 5.0), (70, 5.0)]),
        ];
        let events = extract_events(&daily, &ESConfig::default()).unwrap();
        let mut prev = usize::MAX;
        for p in [10.0, 30.0, 50.0, 70.0, 90.0, 99.0] {
            let cfg = ESConfig { q_edge_percentile: p, ..ESConfig::default() };
            let g = build_graph(&events, &points, &cfg, 2001).unwrap();
            assert!(g.edges().len() <= prev, "edge count grew at percentile {p}");
            prev = g.edges().len();
        }
    }
}
