//! Core data model: grid points, event series, spatial graphs, and daily
//! feature snapshots.
//!
//! All types are immutable after construction and safe to share across
//! worker threads. Time inside one monsoon season is an integer day index,
//! 0-based from June 1; calendar mapping lives in [`crate::io`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of days in the June–September monsoon window (30+31+31+30).
pub const SEASON_DAYS: usize = 122;

/// A grid location. Ids within one graph are unique and contiguous from 0,
/// assigned in ascending `(lat, lon)` order at ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub id: usize,
    /// Degrees north, in [-90, 90].
    pub lat: f64,
    /// Degrees east, in [-180, 180].
    pub lon: f64,
}

/// Ordered event days for one node, extracted from rainfall above a
/// threshold. `times` is strictly increasing; a node never has two events
/// on the same day.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventSeries {
    pub node_id: usize,
    times: Vec<u32>,
}

impl EventSeries {
    /// Builds a series, rejecting unsorted or duplicated event days.
    pub fn new(node_id: usize, times: Vec<u32>) -> Result<Self, GridError> {
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(GridError::UnsortedEvents { node_id });
        }
        Ok(Self { node_id, times })
    }

    pub fn times(&self) -> &[u32] {
        &self.times
    }

    /// Number of events at this node.
    pub fn count(&self) -> usize {
        self.times.len()
    }
}

/// An undirected edge `(i, j)` with synchronization strength `q`.
/// Stored once with `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub q: f64,
}

/// A climate network for one season: grid points plus the thresholded
/// synchronization edges between them.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGraph {
    nodes: Vec<GridPoint>,
    edges: Vec<Edge>,
    pub year_label: i32,
}

impl SpatialGraph {
    /// Builds a graph, validating node ids, coordinate ranges, and edge
    /// normalization (`i < j`, endpoints in range, no self-loops).
    pub fn new(nodes: Vec<GridPoint>, mut edges: Vec<Edge>, year_label: i32) -> Result<Self, GridError> {
        for (idx, p) in nodes.iter().enumerate() {
            if p.id != idx {
                return Err(GridError::NonContiguousIds { expected: idx, got: p.id });
            }
            if !(-90.0..=90.0).contains(&p.lat) || !(-180.0..=180.0).contains(&p.lon) {
                return Err(GridError::CoordinateOutOfRange { id: p.id, lat: p.lat, lon: p.lon });
            }
        }
        let n = nodes.len();
        for e in &edges {
            if e.i >= e.j {
                return Err(GridError::BadEdge { i: e.i, j: e.j });
            }
            if e.j >= n {
                return Err(GridError::EdgeEndpointOutOfRange { i: e.i, j: e.j, nodes: n });
            }
            if !e.q.is_finite() || e.q < 0.0 {
                return Err(GridError::BadEdgeWeight { i: e.i, j: e.j, q: e.q });
            }
        }
        edges.sort_by(|a, b| (a.i, a.j).cmp(&(b.i, b.j)));
        Ok(Self { nodes, edges, year_label })
    }

    pub fn nodes(&self) -> &[GridPoint] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

/// One day's node-feature matrix, bound to the graph named by `graph_ref`
/// (the season's year label).
///
/// Feature layout is fixed: column 0 is rainfall in mm/day, columns
/// 1..F-2 are optional extra variables, and the final two columns are
/// lat, lon. Anomaly scoring relies on rainfall being column 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ClimateSnapshot {
    pub date: chrono::NaiveDate,
    /// 0-based day index within the season window.
    pub day_index: u32,
    pub graph_ref: i32,
    rows: usize,
    cols: usize,
    features: Vec<f64>,
}

/// Index of the rainfall column in snapshot features.
pub const RAINFALL_COL: usize = 0;

impl ClimateSnapshot {
    pub fn new(
        date: chrono::NaiveDate,
        day_index: u32,
        graph_ref: i32,
        rows: usize,
        cols: usize,
        features: Vec<f64>,
    ) -> Result<Self, GridError> {
        if features.len() != rows * cols {
            return Err(GridError::FeatureLengthMismatch {
                rows,
                cols,
                len: features.len(),
            });
        }
        if cols < 3 {
            return Err(GridError::TooFewColumns { cols });
        }
        Ok(Self { date, day_index, graph_ref, rows, cols, features })
    }

    pub fn node_count(&self) -> usize {
        self.rows
    }

    pub fn feature_count(&self) -> usize {
        self.cols
    }

    pub fn feature(&self, node: usize, col: usize) -> f64 {
        self.features[node * self.cols + col]
    }

    pub fn row(&self, node: usize) -> &[f64] {
        &self.features[node * self.cols..(node + 1) * self.cols]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn rainfall(&self, node: usize) -> f64 {
        self.feature(node, RAINFALL_COL)
    }
}

/// First invariant violation found in a snapshot against its graph, or
/// success. Each failure mode is a distinct variant so callers can report
/// precisely what broke.
pub fn validate_snapshot(snapshot: &ClimateSnapshot, graph: &SpatialGraph) -> Result<(), GridError> {
    if snapshot.node_count() != graph.node_count() {
        return Err(GridError::DimensionMismatch {
            snapshot_nodes: snapshot.node_count(),
            graph_nodes: graph.node_count(),
        });
    }
    for node in 0..snapshot.node_count() {
        for col in 0..snapshot.feature_count() {
            let v = snapshot.feature(node, col);
            if !v.is_finite() {
                return Err(GridError::NonFiniteEntry { node, col });
            }
        }
        let rain = snapshot.rainfall(node);
        if rain < 0.0 {
            return Err(GridError::NegativeRainfall { node, value: rain });
        }
    }
    Ok(())
}

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("node ids must be contiguous from 0: expected {expected}, got {got}")]
    NonContiguousIds { expected: usize, got: usize },
    #[error("node {id} coordinates out of range: lat={lat} lon={lon}")]
    CoordinateOutOfRange { id: usize, lat: f64, lon: f64 },
    #[error("edge ({i}, {j}) violates i < j normalization")]
    BadEdge { i: usize, j: usize },
    #[error("edge ({i}, {j}) endpoint outside 0..{nodes}")]
    EdgeEndpointOutOfRange { i: usize, j: usize, nodes: usize },
    #[error("edge ({i}, {j}) has invalid weight {q}")]
    BadEdgeWeight { i: usize, j: usize, q: f64 },
    #[error("node {node_id} event times not strictly increasing")]
    UnsortedEvents { node_id: usize },
    #[error("feature matrix {rows}x{cols} does not match data length {len}")]
    FeatureLengthMismatch { rows: usize, cols: usize, len: usize },
    #[error("snapshots need at least rainfall, lat, lon columns, got {cols}")]
    TooFewColumns { cols: usize },
    #[error("snapshot has {snapshot_nodes} rows but graph has {graph_nodes} nodes")]
    DimensionMismatch { snapshot_nodes: usize, graph_nodes: usize },
    #[error("non-finite feature at node {node}, column {col}")]
    NonFiniteEntry { node: usize, col: usize },
    #[error("negative rainfall {value} at node {node}")]
    NegativeRainfall { node: usize, value: f64 },
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn toy_graph() -> SpatialGraph {
        let nodes = vec![
            GridPoint { id: 0, lat: 10.0, lon: 70.0 },
            GridPoint { id: 1, lat: 10.0, lon: 70.25 },
            GridPoint { id: 2, lat: 10.25, lon: 70.0 },
        ];
        let edges = vec![Edge { i: 0, j: 1, q: 0.5 }];
        SpatialGraph::new(nodes, edges, 1995).unwrap()
    }

    fn snapshot(rows: usize, features: Vec<f64>) -> ClimateSnapshot {
        ClimateSnapshot::new(
            NaiveDate::from_ymd_opt(1995, 6, 1).unwrap(),
            0,
            1995,
            rows,
            3,
            features,
        )
        .unwrap()
    }

    #[test]
    fn well_formed_snapshot_validates() {
        let g = toy_graph();
        let s = snapshot(3, vec![
            1.0, 10.0, 70.0,
            2.0, 10.0, 70.25,
            0.0, 10.25, 70.0,
        ]);
        assert_eq!(validate_snapshot(&s, &g), Ok(()));
    }

    #[test]
    fn row_count_mismatch_is_dimension_error() {
        let g = toy_graph();
        let s = snapshot(2, vec![1.0, 10.0, 70.0, 2.0, 10.0, 70.25]);
        assert_eq!(
            validate_snapshot(&s, &g),
            Err(GridError::DimensionMismatch { snapshot_nodes: 2, graph_nodes: 3 })
        );
    }

    #[test]
    fn non_finite_rainfall_is_reported_with_position() {
        let g = toy_graph();
        let s = snapshot(3, vec![
            1.0, 10.0, 70.0,
            f64::NAN, 10.0, 70.25,
            0.0, 10.25, 70.0,
        ]);
        assert_eq!(
            validate_snapshot(&s, &g),
            Err(GridError::NonFiniteEntry { node: 1, col: 0 })
        );
    }

    #[test]
    fn negative_rainfall_is_distinct_from_non_finite() {
        let g = toy_graph();
        let s = snapshot(3, vec![
            1.0, 10.0, 70.0,
            -0.5, 10.0, 70.25,
            0.0, 10.25, 70.0,
        ]);
        assert_eq!(
            validate_snapshot(&s, &g),
            Err(GridError::NegativeRainfall { node: 1, value: -0.5 })
        );
    }

    #[test]
    fn edges_must_be_normalized() {
        let nodes = vec![
            GridPoint { id: 0, lat: 0.0, lon: 0.0 },
            GridPoint { id: 1, lat: 1.0, lon: 0.0 },
        ];
        let err = SpatialGraph::new(nodes.clone(), vec![Edge { i: 1, j: 0, q: 1.0 }], 2000);
        assert_eq!(err.unwrap_err(), GridError::BadEdge { i: 1, j: 0 });
        let err = SpatialGraph::new(nodes, vec![Edge { i: 1, j: 1, q: 1.0 }], 2000);
        assert_eq!(err.unwrap_err(), GridError::BadEdge { i: 1, j: 1 });
    }

    #[test]
    fn event_series_rejects_duplicates() {
        assert!(EventSeries::new(0, vec![1, 5, 5]).is_err());
        assert!(EventSeries::new(0, vec![3, 1]).is_err());
        let s = EventSeries::new(0, vec![1, 5, 9]).unwrap();
        assert_eq!(s.count(), 3);
    }
}
