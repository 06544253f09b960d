//! Graph attention autoencoder: attention layers, a degree-normalized
//! convolution baseline, and the two-layer encoder / two-layer decoder
//! stack.
//!
//! Layers run over a directed edge index (both directions of each
//! undirected edge, plus a self-loop per node) sorted by target node, so
//! attention softmax groups are contiguous and aggregation order is fixed.
//! Edge strengths from the climate graph are not inputs to attention;
//! edges act as unweighted connectivity.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::SpatialGraph;
use crate::numeric::{NumericError, Tape, Tensor2, TensorId};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;
pub const DEFAULT_HIDDEN_DIM: usize = 256;
/// Main-text latent width; the appendix preset is 64.
pub const DEFAULT_LATENT_DIM: usize = 4;

/// Directed connectivity for one graph, ready for attention: edge arrays
/// sorted by `(dst, src)` with CSR offsets per target node. Self-loops
/// guarantee every node a non-empty neighborhood.
#[derive(Debug, Clone)]
pub struct EdgeIndex {
    src: Arc<Vec<usize>>,
    dst: Arc<Vec<usize>>,
    offsets: Arc<Vec<usize>>,
    gcn_norm: Arc<Vec<f64>>,
    n_nodes: usize,
}

impl EdgeIndex {
    pub fn from_graph(graph: &SpatialGraph) -> Self {
        let pairs: Vec<(usize, usize)> = graph.edges().iter().map(|e| (e.i, e.j)).collect();
        Self::from_undirected(graph.node_count(), &pairs)
    }

    /// Builds from undirected pairs; expands both directions and adds one
    /// self-loop per node.
    pub fn from_undirected(n_nodes: usize, pairs: &[(usize, usize)]) -> Self {
        let mut directed: Vec<(usize, usize)> = Vec::with_capacity(pairs.len() * 2 + n_nodes);
        for &(i, j) in pairs {
            directed.push((i, j));
            directed.push((j, i));
        }
        for v in 0..n_nodes {
            directed.push((v, v));
        }
        Self::from_directed(n_nodes, directed)
    }

    /// `directed` holds `(dst, src)` pairs: src contributes a message to dst.
    fn from_directed(n_nodes: usize, mut directed: Vec<(usize, usize)>) -> Self {
        directed.sort_unstable();
        directed.dedup();
        let mut src = Vec::with_capacity(directed.len());
        let mut dst = Vec::with_capacity(directed.len());
        let mut offsets = vec![0usize; n_nodes + 1];
        for &(d, s) in &directed {
            dst.push(d);
            src.push(s);
            offsets[d + 1] += 1;
        }
        for v in 0..n_nodes {
            offsets[v + 1] += offsets[v];
        }
        // in-degree equals out-degree here because edges are symmetric
        let degree: Vec<usize> = (0..n_nodes).map(|v| offsets[v + 1] - offsets[v]).collect();
        let gcn_norm: Vec<f64> = (0..src.len())
            .map(|k| 1.0 / ((degree[dst[k]] * degree[src[k]]) as f64).sqrt())
            .collect();
        Self {
            src: Arc::new(src),
            dst: Arc::new(dst),
            offsets: Arc::new(offsets),
            gcn_norm: Arc::new(gcn_norm),
            n_nodes,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_directed_edges(&self) -> usize {
        self.src.len()
    }

    /// Neighborhood of `node` as a contiguous edge range.
    pub fn incoming(&self, node: usize) -> std::ops::Range<usize> {
        self.offsets[node]..self.offsets[node + 1]
    }

    fn check_nonempty_neighborhoods(&self) -> Result<(), GatError> {
        for v in 0..self.n_nodes {
            if self.incoming(v).is_empty() {
                return Err(GatError::EmptyNeighborhood { node: v });
            }
        }
        Ok(())
    }
}

/// One attention layer's parameters: the shared projection and the
/// attention vector over `[W x_dst || W x_src]`. No bias by default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatLayerParams {
    pub w: Tensor2,
    /// Length `2 * out_dim`, column vector.
    pub a: Tensor2,
    pub leaky_slope: f64,
}

impl GatLayerParams {
    pub fn in_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.w.cols()
    }

    fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor2 {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        Tensor2::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound))
    }

    pub fn init(rng: &mut ChaCha8Rng, in_dim: usize, out_dim: usize, leaky_slope: f64) -> Self {
        Self {
            w: Self::glorot(rng, in_dim, out_dim),
            a: Self::glorot(rng, 2 * out_dim, 1),
            leaky_slope,
        }
    }

    fn validate(&self, in_dim: usize, out_dim: usize) -> Result<(), GatError> {
        if self.w.shape() != (in_dim, out_dim) || self.a.shape() != (2 * out_dim, 1) {
            return Err(GatError::BadLayerShape {
                w_rows: self.w.rows(),
                w_cols: self.w.cols(),
                a_len: self.a.rows(),
            });
        }
        if !self.w.all_finite() || !self.a.all_finite() || !self.leaky_slope.is_finite() {
            return Err(GatError::NonFiniteParams);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Gat,
    Gcn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: usize,
    pub latent: usize,
}

impl ModelDims {
    /// (in, out) of the four layers in forward order.
    pub fn layer_dims(&self) -> [(usize, usize); 4] {
        [
            (self.input, self.hidden),
            (self.hidden, self.latent),
            (self.latent, self.hidden),
            (self.hidden, self.input),
        ]
    }
}

/// All learnable weights of the autoencoder (attention or baseline mode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub enc1: GatLayerParams,
    pub enc2: GatLayerParams,
    pub dec1: GatLayerParams,
    pub dec2: GatLayerParams,
    pub dims: ModelDims,
    pub mode: LayerKind,
    pub scr_enabled: bool,
}

impl ModelParams {
    /// Seeded glorot-uniform initialization; identical seeds give
    /// bit-identical parameters.
    pub fn init(dims: ModelDims, mode: LayerKind, scr_enabled: bool, seed: u64) -> Result<Self, GatError> {
        if dims.latent == 0 || dims.hidden == 0 || dims.input == 0 {
            return Err(GatError::BadDims { input: dims.input, hidden: dims.hidden, latent: dims.latent });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [d1, d2, d3, d4] = dims.layer_dims();
        let p = Self {
            enc1: GatLayerParams::init(&mut rng, d1.0, d1.1, DEFAULT_LEAKY_SLOPE),
            enc2: GatLayerParams::init(&mut rng, d2.0, d2.1, DEFAULT_LEAKY_SLOPE),
            dec1: GatLayerParams::init(&mut rng, d3.0, d3.1, DEFAULT_LEAKY_SLOPE),
            dec2: GatLayerParams::init(&mut rng, d4.0, d4.1, DEFAULT_LEAKY_SLOPE),
            dims,
            mode,
            scr_enabled,
        };
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), GatError> {
        if self.dims.latent == 0 || self.dims.hidden == 0 || self.dims.input == 0 {
            return Err(GatError::BadDims {
                input: self.dims.input,
                hidden: self.dims.hidden,
                latent: self.dims.latent,
            });
        }
        let [d1, d2, d3, d4] = self.dims.layer_dims();
        self.enc1.validate(d1.0, d1.1)?;
        self.enc2.validate(d2.0, d2.1)?;
        self.dec1.validate(d3.0, d3.1)?;
        self.dec2.validate(d4.0, d4.1)?;
        Ok(())
    }

    pub fn layers(&self) -> [&GatLayerParams; 4] {
        [&self.enc1, &self.enc2, &self.dec1, &self.dec2]
    }

    pub fn layers_mut(&mut self) -> [&mut GatLayerParams; 4] {
        [&mut self.enc1, &mut self.enc2, &mut self.dec1, &mut self.dec2]
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GatError {
    #[error("node {node} has an empty neighborhood (self-loops missing)")]
    EmptyNeighborhood { node: usize },
    #[error("layer shape invalid: W is {w_rows}x{w_cols}, a has {a_len} rows")]
    BadLayerShape { w_rows: usize, w_cols: usize, a_len: usize },
    #[error("model dims must be positive: input={input} hidden={hidden} latent={latent}")]
    BadDims { input: usize, hidden: usize, latent: usize },
    #[error("non-finite parameters")]
    NonFiniteParams,
    #[error("input has {got} feature columns, model expects {expected}")]
    InputDimMismatch { got: usize, expected: usize },
    #[error("input has {got} rows, edge index covers {expected} nodes")]
    NodeCountMismatch { got: usize, expected: usize },
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// One attention layer's parameters registered on a tape. The attention
/// vector is split into its target and source halves so edge scores can be
/// formed with two projections instead of per-edge concatenation.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub w: TensorId,
    pub a_dst: TensorId,
    pub a_src: TensorId,
    leaky_slope: f64,
}

impl LayerVars {
    pub fn insert(tape: &mut Tape, params: &GatLayerParams) -> Self {
        let out = params.out_dim();
        let a = &params.a;
        let a_dst = Tensor2::from_fn(out, 1, |r, _| a.get(r, 0));
        let a_src = Tensor2::from_fn(out, 1, |r, _| a.get(out + r, 0));
        Self {
            w: tape.input(params.w.clone()),
            a_dst: tape.input(a_dst),
            a_src: tape.input(a_src),
            leaky_slope: params.leaky_slope,
        }
    }
}

/// Attention layer forward: per incoming edge `(dst, src)` the raw score
/// is `LeakyReLU(a_dst . h_dst + a_src . h_src)` with `h = X W`, softmaxed
/// over each target's neighborhood, then messages are aggregated as
/// `out_dst = sum alpha * h_src`.
pub fn gat_layer(
    tape: &mut Tape,
    x: TensorId,
    edges: &EdgeIndex,
    layer: &LayerVars,
) -> Result<TensorId, GatError> {
    edges.check_nonempty_neighborhoods()?;
    if tape.value(x).rows() != edges.n_nodes {
        return Err(GatError::NodeCountMismatch { got: tape.value(x).rows(), expected: edges.n_nodes });
    }
    let h = tape.matmul(x, layer.w)?;
    let score_dst = tape.matmul(h, layer.a_dst)?;
    let score_src = tape.matmul(h, layer.a_src)?;
    let e_dst = tape.gather_rows(score_dst, edges.dst.clone())?;
    let e_src = tape.gather_rows(score_src, edges.src.clone())?;
    let e_sum = tape.add(e_dst, e_src)?;
    let e = tape.leaky_relu(e_sum, layer.leaky_slope)?;
    let alpha = tape.neighborhood_softmax(e, edges.offsets.clone())?;
    let out = tape.edge_aggregate(h, alpha, edges.src.clone(), edges.dst.clone(), edges.n_nodes)?;
    Ok(out)
}

/// Attention coefficients of one layer given its input, for inspection
/// and normalization checks: per-edge alpha aligned with the edge index.
pub fn gat_attention(
    tape: &mut Tape,
    x: TensorId,
    edges: &EdgeIndex,
    layer: &LayerVars,
) -> Result<TensorId, GatError> {
    let h = tape.matmul(x, layer.w)?;
    let score_dst = tape.matmul(h, layer.a_dst)?;
    let score_src = tape.matmul(h, layer.a_src)?;
    let e_dst = tape.gather_rows(score_dst, edges.dst.clone())?;
    let e_src = tape.gather_rows(score_src, edges.src.clone())?;
    let e_sum = tape.add(e_dst, e_src)?;
    let e = tape.leaky_relu(e_sum, layer.leaky_slope)?;
    Ok(tape.neighborhood_softmax(e, edges.offsets.clone())?)
}

/// Baseline convolution layer: symmetric degree-normalized aggregation of
/// projected features over the self-looped edge set.
pub fn gcn_layer(
    tape: &mut Tape,
    x: TensorId,
    edges: &EdgeIndex,
    w: TensorId,
) -> Result<TensorId, GatError> {
    edges.check_nonempty_neighborhoods()?;
    if tape.value(x).rows() != edges.n_nodes {
        return Err(GatError::NodeCountMismatch { got: tape.value(x).rows(), expected: edges.n_nodes });
    }
    let h = tape.matmul(x, w)?;
    let norm = tape.input(Tensor2::from_vec(
        edges.gcn_norm.len(),
        1,
        edges.gcn_norm.as_ref().clone(),
    )?);
    let out = tape.edge_aggregate(h, norm, edges.src.clone(), edges.dst.clone(), edges.n_nodes)?;
    Ok(out)
}

/// All four layers registered on one tape.
#[derive(Debug, Clone, Copy)]
pub struct ModelVars {
    pub enc1: LayerVars,
    pub enc2: LayerVars,
    pub dec1: LayerVars,
    pub dec2: LayerVars,
    mode: LayerKind,
}

impl ModelVars {
    pub fn insert(tape: &mut Tape, params: &ModelParams) -> Self {
        Self {
            enc1: LayerVars::insert(tape, &params.enc1),
            enc2: LayerVars::insert(tape, &params.enc2),
            dec1: LayerVars::insert(tape, &params.dec1),
            dec2: LayerVars::insert(tape, &params.dec2),
            mode: params.mode,
        }
    }

    pub fn layers(&self) -> [&LayerVars; 4] {
        [&self.enc1, &self.enc2, &self.dec1, &self.dec2]
    }

    fn apply(
        &self,
        tape: &mut Tape,
        x: TensorId,
        edges: &EdgeIndex,
        layer: &LayerVars,
    ) -> Result<TensorId, GatError> {
        match self.mode {
            LayerKind::Gat => gat_layer(tape, x, edges, layer),
            LayerKind::Gcn => gcn_layer(tape, x, edges, layer.w),
        }
    }
}

/// Two-layer encoder; the latent is rectified, so it is non-negative.
pub fn encode(
    tape: &mut Tape,
    vars: &ModelVars,
    x: TensorId,
    edges: &EdgeIndex,
    dims: &ModelDims,
) -> Result<TensorId, GatError> {
    if tape.value(x).cols() != dims.input {
        return Err(GatError::InputDimMismatch { got: tape.value(x).cols(), expected: dims.input });
    }
    let h1 = vars.apply(tape, x, edges, &vars.enc1)?;
    let h1 = tape.relu(h1)?;
    let z = vars.apply(tape, h1, edges, &vars.enc2)?;
    Ok(tape.relu(z)?)
}

/// Two-layer decoder; the final layer has no activation.
pub fn decode(
    tape: &mut Tape,
    vars: &ModelVars,
    z: TensorId,
    edges: &EdgeIndex,
    dims: &ModelDims,
) -> Result<TensorId, GatError> {
    if tape.value(z).cols() != dims.latent {
        return Err(GatError::InputDimMismatch { got: tape.value(z).cols(), expected: dims.latent });
    }
    let h2 = vars.apply(tape, z, edges, &vars.dec1)?;
    let h2 = tape.relu(h2)?;
    Ok(vars.apply(tape, h2, edges, &vars.dec2)?)
}

/// Forward pass without gradient bookkeeping exposed: returns the latent
/// and the reconstruction as plain tensors.
pub fn reconstruct(
    params: &ModelParams,
    x: &Tensor2,
    edges: &EdgeIndex,
) -> Result<(Tensor2, Tensor2), GatError> {
    let mut tape = Tape::new();
    let vars = ModelVars::insert(&mut tape, params);
    let xi = tape.input(x.clone());
    let z = encode(&mut tape, &vars, xi, edges, &params.dims)?;
    let xhat = decode(&mut tape, &vars, z, edges, &params.dims)?;
    Ok((tape.value(z).clone(), tape.value(xhat).clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_graph(n: usize) -> EdgeIndex {
        let pairs: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
        EdgeIndex::from_undirected(n, &pairs)
    }

    #[test]
    fn isolated_node_with_self_loop_passes_projection_through() {
        // single node, self-loop only: attention softmax over one edge is 1
        let edges = EdgeIndex::from_undirected(1, &[]);
        let params = GatLayerParams {
            w: Tensor2::from_vec(2, 2, vec![2.0, 0.0, 0.0, 3.0]).unwrap(),
            a: Tensor2::from_vec(4, 1, vec![0.3, -0.2, 0.5, 0.7]).unwrap(),
            leaky_slope: 0.2,
        };
        let mut tape = Tape::new();
        let vars = LayerVars::insert(&mut tape, &params);
        let x = tape.input(Tensor2::from_vec(1, 2, vec![1.5, -1.0]).unwrap());
        let out = gat_layer(&mut tape, x, &edges, &vars).unwrap();
        assert_eq!(tape.value(out).data(), &[3.0, -3.0]);
    }

    #[test]
    fn zero_attention_vector_gives_neighborhood_mean() {
        let edges = EdgeIndex::from_undirected(2, &[(0, 1)]);
        let params = GatLayerParams {
            w: Tensor2::from_vec(1, 1, vec![1.0]).unwrap(),
            a: Tensor2::zeros(2, 1),
            leaky_slope: 0.2,
        };
        let mut tape = Tape::new();
        let vars = LayerVars::insert(&mut tape, &params);
        let x = tape.input(Tensor2::from_vec(2, 1, vec![2.0, 6.0]).unwrap());
        let out = gat_layer(&mut tape, x, &edges, &vars).unwrap();
        assert_eq!(tape.value(out).data(), &[4.0, 4.0]);
    }

    #[test]
    fn attention_sums_to_one_per_node() {
        let edges = line_graph(5);
        let params = GatLayerParams::init(&mut ChaCha8Rng::seed_from_u64(7), 3, 4, 0.2);
        let mut tape = Tape::new();
        let vars = LayerVars::insert(&mut tape, &params);
        let x = tape.input(Tensor2::from_fn(5, 3, |r, c| (r as f64) - (c as f64) * 0.5));
        let alpha = gat_attention(&mut tape, x, &edges, &vars).unwrap();
        let av = tape.value(alpha);
        for node in 0..5 {
            let sum: f64 = edges.incoming(node).map(|k| av.get(k, 0)).sum();
            assert!((sum - 1.0).abs() < 1e-9);
            for k in edges.incoming(node) {
                let a = av.get(k, 0);
                assert!(a > 0.0 && a <= 1.0);
            }
        }
    }

    #[test]
    fn gcn_isolated_node_is_projection() {
        let edges = EdgeIndex::from_undirected(1, &[]);
        let mut tape = Tape::new();
        let w = tape.input(Tensor2::from_vec(2, 1, vec![1.0, 2.0]).unwrap());
        let x = tape.input(Tensor2::from_vec(1, 2, vec![3.0, 4.0]).unwrap());
        let out = gcn_layer(&mut tape, x, &edges, w).unwrap();
        assert_eq!(tape.value(out).data(), &[11.0]);
    }

    #[test]
    fn gcn_identical_features_on_complete_pair_stay_identical() {
        let edges = EdgeIndex::from_undirected(2, &[(0, 1)]);
        let mut tape = Tape::new();
        let w = tape.input(Tensor2::from_vec(2, 2, vec![1.0, 0.5, -0.5, 2.0]).unwrap());
        let x = tape.input(Tensor2::from_vec(2, 2, vec![1.0, 2.0, 1.0, 2.0]).unwrap());
        let out = gcn_layer(&mut tape, x, &edges, w).unwrap();
        let v = tape.value(out);
        assert_eq!(v.row(0), v.row(1));
    }

    #[test]
    fn zero_input_encodes_to_zero_latent() {
        let dims = ModelDims { input: 3, hidden: 4, latent: 2 };
        let params = ModelParams::init(dims, LayerKind::Gat, true, 1).unwrap();
        let edges = line_graph(4);
        let x = Tensor2::zeros(4, 3);
        let (z, _) = reconstruct(&params, &x, &edges).unwrap();
        assert_eq!(z.data(), &[0.0; 8]);
    }

    #[test]
    fn autoencoder_output_shape_matches_input() {
        let dims = ModelDims { input: 3, hidden: 8, latent: 4 };
        let params = ModelParams::init(dims, LayerKind::Gat, false, 42).unwrap();
        let edges = line_graph(6);
        let x = Tensor2::from_fn(6, 3, |r, c| (r * 3 + c) as f64 * 0.1);
        let (z, xhat) = reconstruct(&params, &x, &edges).unwrap();
        assert_eq!(z.shape(), (6, 4));
        assert_eq!(xhat.shape(), (6, 3));
    }

    #[test]
    fn latent_is_nonnegative_by_construction() {
        let dims = ModelDims { input: 2, hidden: 5, latent: 3 };
        let params = ModelParams::init(dims, LayerKind::Gat, false, 9).unwrap();
        let edges = line_graph(5);
        let x = Tensor2::from_fn(5, 2, |r, c| (r as f64 - 2.0) * (c as f64 + 1.0));
        let (z, _) = reconstruct(&params, &x, &edges).unwrap();
        assert!(z.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn wrong_input_width_is_reported() {
        let dims = ModelDims { input: 3, hidden: 4, latent: 2 };
        let params = ModelParams::init(dims, LayerKind::Gat, false, 1).unwrap();
        let edges = line_graph(4);
        let x = Tensor2::zeros(4, 5);
        let err = reconstruct(&params, &x, &edges).unwrap_err();
        assert_eq!(err, GatError::InputDimMismatch { got: 5, expected: 3 });
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let dims = ModelDims { input: 3, hidden: 8, latent: 4 };
        let a = ModelParams::init(dims, LayerKind::Gat, true, 123).unwrap();
        let b = ModelParams::init(dims, LayerKind::Gat, true, 123).unwrap();
        assert_eq!(a, b);
        let c = ModelParams::init(dims, LayerKind::Gat, true, 124).unwrap();
        assert_ne!(a, c);
    }
}
