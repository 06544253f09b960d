//! Gaussian geographic weights and the spatial consistency penalty.
//!
//! Weights pull geographically close nodes toward similar latent vectors.
//! The pair set is sparsified to each node's k nearest neighbors
//! (symmetrized by union); Gaussian decay makes the dropped far pairs
//! negligible. Weight construction is parallel over nodes, the result is
//! immutable and shared read-only during training.

use std::sync::Arc;

use thiserror::Error;

use crate::grid::GridPoint;
use crate::numeric::{NumericError, Tape, Tensor2, TensorId};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Mean Earth radius in km for great-circle distances.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Great-circle distance between two lat/lon points, in km.
pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (phi1, phi2) = (lat1.to_radians(), lat2.to_radians());
    let dphi = (lat2 - lat1).to_radians();
    let dlambda = (lon2 - lon1).to_radians();
    let a = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

/// Sparse symmetric Gaussian weights over node pairs.
///
/// Each stored pair `(i, j)` with `i < j` carries
/// `w = exp(-d^2 / (2 sigma^2))`; the penalty counts it in both orders.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialWeights {
    pairs: Vec<(usize, usize, f64)>,
    pub sigma_km: f64,
    pub k_neighbors: usize,
    node_count: usize,
}

impl SpatialWeights {
    /// Stored pairs, `(i, j, w)` with `i < j`, ordered by `(i, j)`.
    pub fn pairs(&self) -> &[(usize, usize, f64)] {
        &self.pairs
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SpatialError {
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("sigma_km must be finite and > 0, got {0}")]
    BadSigma(f64),
    #[error("k_neighbors must be >= 1")]
    BadK,
    #[error("latent matrix has {z_rows} rows but weights cover {nodes} nodes")]
    DimensionMismatch { z_rows: usize, nodes: usize },
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// Default bandwidth: twice the median nearest-neighbor distance of the
/// grid. Adapts to grid resolution without a hand-picked constant.
pub fn default_sigma_km(points: &[GridPoint]) -> Result<f64, SpatialError> {
    if points.len() < 2 {
        return Err(SpatialError::TooFewPoints(points.len()));
    }
    let nn = |i: usize| -> f64 {
        let p = &points[i];
        points
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, q)| haversine_km(p.lat, p.lon, q.lat, q.lon))
            .fold(f64::INFINITY, f64::min)
    };
    #[cfg(feature = "parallel")]
    let mut dists: Vec<f64> = (0..points.len()).into_par_iter().map(nn).collect();
    #[cfg(not(feature = "parallel"))]
    let mut dists: Vec<f64> = (0..points.len()).map(nn).collect();
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = dists[(dists.len() - 1) / 2];
    if median > 0.0 {
        Ok(2.0 * median)
    } else {
        // degenerate grid of coincident points; any positive sigma works
        Ok(1.0)
    }
}

/// Builds Gaussian weights over the union of every node's k nearest
/// geographic neighbors. Distance ties break by node id, so the pair set
/// is deterministic. Coincident points are allowed and get weight 1.
pub fn build_weights(
    points: &[GridPoint],
    sigma_km: f64,
    k_neighbors: usize,
) -> Result<SpatialWeights, SpatialError> {
    if points.len() < 2 {
        return Err(SpatialError::TooFewPoints(points.len()));
    }
    if !(sigma_km.is_finite() && sigma_km > 0.0) {
        return Err(SpatialError::BadSigma(sigma_km));
    }
    if k_neighbors == 0 {
        return Err(SpatialError::BadK);
    }
    let n = points.len();
    let k = k_neighbors.min(n - 1);

    let neighbors_of = |i: usize| -> Vec<(usize, f64)> {
        let p = &points[i];
        let mut cand: Vec<(usize, f64)> = points
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(j, q)| (j, haversine_km(p.lat, p.lon, q.lat, q.lon)))
            .collect();
        cand.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        cand.truncate(k);
        cand
    };

    #[cfg(feature = "parallel")]
    let per_node: Vec<Vec<(usize, f64)>> = (0..n).into_par_iter().map(neighbors_of).collect();
    #[cfg(not(feature = "parallel"))]
    let per_node: Vec<Vec<(usize, f64)>> = (0..n).map(neighbors_of).collect();

    let two_sigma_sq = 2.0 * sigma_km * sigma_km;
    let mut seen = std::collections::BTreeSet::new();
    for (i, neigh) in per_node.iter().enumerate() {
        for &(j, _) in neigh {
            let key = if i < j { (i, j) } else { (j, i) };
            seen.insert(key);
        }
    }
    let pairs: Vec<(usize, usize, f64)> = seen
        .into_iter()
        .map(|(i, j)| {
            let d = haversine_km(points[i].lat, points[i].lon, points[j].lat, points[j].lon);
            (i, j, (-d * d / two_sigma_sq).exp())
        })
        .collect();

    Ok(SpatialWeights { pairs, sigma_km, k_neighbors, node_count: n })
}

/// Spatial consistency penalty on the tape:
/// `(1/N) * sum over stored pairs in both orders of w * ||z_i - z_j||^2`,
/// i.e. `(2/N) * sum over stored pairs`. Differentiable w.r.t. `z`.
pub fn scr_loss(
    tape: &mut Tape,
    z: TensorId,
    weights: &SpatialWeights,
) -> Result<TensorId, SpatialError> {
    let (z_rows, z_cols) = tape.value(z).shape();
    if z_rows != weights.node_count {
        return Err(SpatialError::DimensionMismatch { z_rows, nodes: weights.node_count });
    }
    let n_pairs = weights.pairs.len();
    if n_pairs == 0 {
        let zero = tape.input(Tensor2::scalar(0.0));
        return Ok(zero);
    }
    let first: Arc<Vec<usize>> = Arc::new(weights.pairs.iter().map(|p| p.0).collect());
    let second: Arc<Vec<usize>> = Arc::new(weights.pairs.iter().map(|p| p.1).collect());
    let w = tape.input(Tensor2::from_vec(
        n_pairs,
        1,
        weights.pairs.iter().map(|p| p.2).collect(),
    )?);

    let zi = tape.gather_rows(z, first)?;
    let zj = tape.gather_rows(z, second)?;
    let diff = tape.sub(zi, zj)?;
    let sq = tape.mul_elem(diff, diff)?;
    let ones = tape.input(Tensor2::from_vec(z_cols, 1, vec![1.0; z_cols])?);
    let row_sums = tape.matmul(sq, ones)?;
    let weighted = tape.mul_elem(row_sums, w)?;
    let total = tape.reduce_sum(weighted)?;
    let loss = tape.scale(total, 2.0 / weights.node_count as f64)?;
    Ok(loss)
}

/// Plain-value spatial penalty over a latent matrix, same convention as
/// [`scr_loss`]. Used for reporting where no gradient is needed.
pub fn scr_value(z: &Tensor2, weights: &SpatialWeights) -> f64 {
    let cols = z.cols();
    let mut total = 0.0;
    for &(i, j, w) in &weights.pairs {
        let mut d2 = 0.0;
        for c in 0..cols {
            let d = z.get(i, c) - z.get(j, c);
            d2 += d * d;
        }
        total += w * d2;
    }
    2.0 * total / weights.node_count as f64
}
