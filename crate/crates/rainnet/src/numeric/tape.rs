//! Recording tape for reverse-mode differentiation.
//!
//! A [`Tape`] owns every tensor produced during one forward pass. Ops only
//! reference earlier tensors, so tape order is already topological and
//! [`Tape::backward`] is a single reverse sweep that visits each node once.
//! Tapes are not shared across threads; parallelism is allowed inside
//! individual primitives (matmul row blocks) where each output row has a
//! fixed accumulation order, keeping results bit-identical across thread
//! counts.

use std::sync::Arc;

use super::{NumericError, Tensor2};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Handle to a tensor recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

enum Op {
    Input,
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    MulElem(TensorId, TensorId),
    Scale(TensorId, f64),
    MatMul(TensorId, TensorId),
    LeakyRelu(TensorId, f64),
    Relu(TensorId),
    Exp(TensorId),
    GatherRows(TensorId, Arc<Vec<usize>>),
    ScatterAdd(TensorId, Arc<Vec<usize>>),
    RowScale(TensorId, TensorId),
    EdgeAggregate {
        features: TensorId,
        coeffs: TensorId,
        src: Arc<Vec<usize>>,
        dst: Arc<Vec<usize>>,
    },
    NeighborhoodSoftmax(TensorId, Arc<Vec<usize>>),
    FrobeniusSq(TensorId),
    ReduceSum(TensorId),
}

pub struct Tape {
    values: Vec<Tensor2>,
    ops: Vec<Op>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { values: Vec::new(), ops: Vec::new() }
    }

    /// Registers an input tensor (parameter or data). Inputs participate
    /// in gradient computation like any other node.
    pub fn input(&mut self, t: Tensor2) -> TensorId {
        self.push_unchecked(t, Op::Input)
    }

    pub fn value(&self, id: TensorId) -> &Tensor2 {
        &self.values[id.0]
    }

    /// Value of a 1x1 tensor.
    pub fn scalar_value(&self, id: TensorId) -> Result<f64, NumericError> {
        let t = self.value(id);
        if !t.is_scalar() {
            return Err(NumericError::LossNotScalar { rows: t.rows(), cols: t.cols() });
        }
        Ok(t.scalar_value())
    }

    fn push_unchecked(&mut self, t: Tensor2, op: Op) -> TensorId {
        let id = TensorId(self.values.len());
        self.values.push(t);
        self.ops.push(op);
        id
    }

    fn push(&mut self, t: Tensor2, op: Op, name: &'static str) -> Result<TensorId, NumericError> {
        if !t.all_finite() {
            return Err(NumericError::NonFinite { op: name });
        }
        Ok(self.push_unchecked(t, op))
    }

    fn require_same_shape(
        &self,
        a: TensorId,
        b: TensorId,
        op: &'static str,
    ) -> Result<(usize, usize), NumericError> {
        let (ar, ac) = self.value(a).shape();
        let (br, bc) = self.value(b).shape();
        if (ar, ac) != (br, bc) {
            return Err(NumericError::ShapeMismatch {
                op,
                lhs_rows: ar,
                lhs_cols: ac,
                rhs_rows: br,
                rhs_cols: bc,
            });
        }
        Ok((ar, ac))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NumericError> {
        let (r, c) = self.require_same_shape(a, b, "add")?;
        let mut out = Tensor2::zeros(r, c);
        let (av, bv) = (self.value(a), self.value(b));
        for (o, (x, y)) in out.data_mut().iter_mut().zip(av.data().iter().zip(bv.data())) {
            *o = x + y;
        }
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NumericError> {
        let (r, c) = self.require_same_shape(a, b, "sub")?;
        let mut out = Tensor2::zeros(r, c);
        let (av, bv) = (self.value(a), self.value(b));
        for (o, (x, y)) in out.data_mut().iter_mut().zip(av.data().iter().zip(bv.data())) {
            *o = x - y;
        }
        self.push(out, Op::Sub(a, b), "sub")
    }

    pub fn mul_elem(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NumericError> {
        let (r, c) = self.require_same_shape(a, b, "mul_elem")?;
        let mut out = Tensor2::zeros(r, c);
        let (av, bv) = (self.value(a), self.value(b));
        for (o, (x, y)) in out.data_mut().iter_mut().zip(av.data().iter().zip(bv.data())) {
            *o = x * y;
        }
        self.push(out, Op::MulElem(a, b), "mul_elem")
    }

    pub fn scale(&mut self, a: TensorId, factor: f64) -> Result<TensorId, NumericError> {
        let av = self.value(a);
        let (r, c) = av.shape();
        let mut out = Tensor2::zeros(r, c);
        for (o, x) in out.data_mut().iter_mut().zip(av.data()) {
            *o = x * factor;
        }
        self.push(out, Op::Scale(a, factor), "scale")
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NumericError> {
        let (ar, ac) = self.value(a).shape();
        let (br, bc) = self.value(b).shape();
        if ac != br {
            return Err(NumericError::ShapeMismatch {
                op: "matmul",
                lhs_rows: ar,
                lhs_cols: ac,
                rhs_rows: br,
                rhs_cols: bc,
            });
        }
        let out = matmul_raw(self.value(a), self.value(b));
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    pub fn leaky_relu(&mut self, a: TensorId, slope: f64) -> Result<TensorId, NumericError> {
        let av = self.value(a);
        let (r, c) = av.shape();
        let mut out = Tensor2::zeros(r, c);
        for (o, &x) in out.data_mut().iter_mut().zip(av.data()) {
            *o = if x > 0.0 { x } else { slope * x };
        }
        self.push(out, Op::LeakyRelu(a, slope), "leaky_relu")
    }

    pub fn relu(&mut self, a: TensorId) -> Result<TensorId, NumericError> {
        let av = self.value(a);
        let (r, c) = av.shape();
        let mut out = Tensor2::zeros(r, c);
        for (o, &x) in out.data_mut().iter_mut().zip(av.data()) {
            *o = x.max(0.0);
        }
        self.push(out, Op::Relu(a), "relu")
    }

    pub fn exp(&mut self, a: TensorId) -> Result<TensorId, NumericError> {
        let av = self.value(a);
        let (r, c) = av.shape();
        let mut out = Tensor2::zeros(r, c);
        for (o, &x) in out.data_mut().iter_mut().zip(av.data()) {
            *o = x.exp();
        }
        self.push(out, Op::Exp(a), "exp")
    }

    /// `out[k, :] = a[idx[k], :]`.
    pub fn gather_rows(&mut self, a: TensorId, idx: Arc<Vec<usize>>) -> Result<TensorId, NumericError> {
        let av = self.value(a);
        let (rows, cols) = av.shape();
        for &i in idx.iter() {
            if i >= rows {
                return Err(NumericError::IndexOutOfRange { op: "gather_rows", index: i, rows });
            }
        }
        let mut out = Tensor2::zeros(idx.len(), cols);
        for (k, &i) in idx.iter().enumerate() {
            out.data_mut()[k * cols..(k + 1) * cols].copy_from_slice(av.row(i));
        }
        self.push(out, Op::GatherRows(a, idx), "gather_rows")
    }

    /// `out[tgt[k], :] += a[k, :]` into a fresh `out_rows x C` tensor.
    /// Rows are accumulated in edge order, so the result is independent of
    /// thread count by construction.
    pub fn scatter_add(
        &mut self,
        a: TensorId,
        tgt: Arc<Vec<usize>>,
        out_rows: usize,
    ) -> Result<TensorId, NumericError> {
        let av = self.value(a);
        let (rows, cols) = av.shape();
        if tgt.len() != rows {
            return Err(NumericError::ShapeMismatch {
                op: "scatter_add",
                lhs_rows: rows,
                lhs_cols: cols,
                rhs_rows: tgt.len(),
                rhs_cols: 1,
            });
        }
        for &t in tgt.iter() {
            if t >= out_rows {
                return Err(NumericError::IndexOutOfRange { op: "scatter_add", index: t, rows: out_rows });
            }
        }
        let mut out = Tensor2::zeros(out_rows, cols);
        for (k, &t) in tgt.iter().enumerate() {
            let src = av.row(k);
            let dst = &mut out.data_mut()[t * cols..(t + 1) * cols];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        self.push(out, Op::ScatterAdd(a, tgt), "scatter_add")
    }

    /// Scales row `r` of `m` by `s[r]`; `s` must be a column vector with
    /// one entry per row of `m`.
    pub fn row_scale(&mut self, m: TensorId, s: TensorId) -> Result<TensorId, NumericError> {
        let (mr, mc) = self.value(m).shape();
        let (sr, sc) = self.value(s).shape();
        if sc != 1 || sr != mr {
            return Err(NumericError::ShapeMismatch {
                op: "row_scale",
                lhs_rows: mr,
                lhs_cols: mc,
                rhs_rows: sr,
                rhs_cols: sc,
            });
        }
        let mut out = Tensor2::zeros(mr, mc);
        let (mv, sv) = (self.value(m), self.value(s));
        for r in 0..mr {
            let f = sv.data()[r];
            for c in 0..mc {
                out.set(r, c, mv.get(r, c) * f);
            }
        }
        self.push(out, Op::RowScale(m, s), "row_scale")
    }

    /// Fused gather/scale/scatter: `out[dst[k], :] += coeffs[k] * h[src[k], :]`.
    /// Equivalent to `scatter_add(row_scale(gather_rows(h, src), coeffs), dst)`
    /// without materializing any per-edge feature matrix.
    pub fn edge_aggregate(
        &mut self,
        h: TensorId,
        coeffs: TensorId,
        src: Arc<Vec<usize>>,
        dst: Arc<Vec<usize>>,
        out_rows: usize,
    ) -> Result<TensorId, NumericError> {
        let (hr, hc) = self.value(h).shape();
        let (cr, cc) = self.value(coeffs).shape();
        if cc != 1 || cr != src.len() || src.len() != dst.len() {
            return Err(NumericError::ShapeMismatch {
                op: "edge_aggregate",
                lhs_rows: src.len(),
                lhs_cols: dst.len(),
                rhs_rows: cr,
                rhs_cols: cc,
            });
        }
        for &s in src.iter() {
            if s >= hr {
                return Err(NumericError::IndexOutOfRange { op: "edge_aggregate", index: s, rows: hr });
            }
        }
        for &d in dst.iter() {
            if d >= out_rows {
                return Err(NumericError::IndexOutOfRange { op: "edge_aggregate", index: d, rows: out_rows });
            }
        }
        let mut out = Tensor2::zeros(out_rows, hc);
        {
            let hv = self.value(h);
            let cv = self.value(coeffs);
            for k in 0..src.len() {
                let a = cv.data()[k];
                let row = hv.row(src[k]);
                let acc = &mut out.data_mut()[dst[k] * hc..(dst[k] + 1) * hc];
                for (o, x) in acc.iter_mut().zip(row) {
                    *o += a * x;
                }
            }
        }
        self.push(out, Op::EdgeAggregate { features: h, coeffs, src, dst }, "edge_aggregate")
    }

    /// Softmax over contiguous groups of a column vector. `offsets` are
    /// CSR-style boundaries (`offsets[g]..offsets[g+1]` is group g, offsets
    /// start at 0 and end at the row count). Each group's maximum is
    /// subtracted before exponentiation.
    pub fn neighborhood_softmax(
        &mut self,
        v: TensorId,
        offsets: Arc<Vec<usize>>,
    ) -> Result<TensorId, NumericError> {
        let (rows, cols) = self.value(v).shape();
        if cols != 1 {
            return Err(NumericError::ShapeMismatch {
                op: "neighborhood_softmax",
                lhs_rows: rows,
                lhs_cols: cols,
                rhs_rows: rows,
                rhs_cols: 1,
            });
        }
        if !valid_offsets(&offsets, rows) {
            return Err(NumericError::BadGroupOffsets { op: "neighborhood_softmax", rows });
        }
        let mut out = Tensor2::zeros(rows, 1);
        {
            let vv = self.value(v).data();
            let od = out.data_mut();
            for g in offsets.windows(2) {
                let (lo, hi) = (g[0], g[1]);
                if lo == hi {
                    continue;
                }
                let max = vv[lo..hi].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for k in lo..hi {
                    let e = (vv[k] - max).exp();
                    od[k] = e;
                    sum += e;
                }
                for o in &mut od[lo..hi] {
                    *o /= sum;
                }
            }
        }
        self.push(out, Op::NeighborhoodSoftmax(v, offsets), "neighborhood_softmax")
    }

    /// Sum of squared entries, as a 1x1 tensor.
    pub fn frobenius_sq(&mut self, a: TensorId) -> Result<TensorId, NumericError> {
        let s: f64 = self.value(a).data().iter().map(|v| v * v).sum();
        self.push(Tensor2::scalar(s), Op::FrobeniusSq(a), "frobenius_sq")
    }

    /// Sum of all entries, as a 1x1 tensor.
    pub fn reduce_sum(&mut self, a: TensorId) -> Result<TensorId, NumericError> {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Tensor2::scalar(s), Op::ReduceSum(a), "reduce_sum")
    }

    /// Reverse sweep from a scalar loss. Returns a gradient for every node
    /// on the tape; nodes the loss does not depend on get zero gradient.
    pub fn backward(&self, loss: TensorId) -> Result<Gradients, NumericError> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(NumericError::LossNotScalar { rows: lt.rows(), cols: lt.cols() });
        }
        let mut grads: Vec<Option<Tensor2>> = vec![None; self.values.len()];
        grads[loss.0] = Some(Tensor2::scalar(1.0));

        for i in (0..self.ops.len()).rev() {
            let Some(go) = grads[i].take() else { continue };
            match &self.ops[i] {
                Op::Input => {}
                Op::Add(a, b) => {
                    add_into(slot(&mut grads, *a, self.value(*a).shape()), go.data(), 1.0);
                    add_into(slot(&mut grads, *b, self.value(*b).shape()), go.data(), 1.0);
                }
                Op::Sub(a, b) => {
                    add_into(slot(&mut grads, *a, self.value(*a).shape()), go.data(), 1.0);
                    add_into(slot(&mut grads, *b, self.value(*b).shape()), go.data(), -1.0);
                }
                Op::MulElem(a, b) => {
                    let bv = self.value(*b).data().to_vec();
                    let av = self.value(*a).data().to_vec();
                    mul_add_into(slot(&mut grads, *a, self.value(*a).shape()), go.data(), &bv);
                    mul_add_into(slot(&mut grads, *b, self.value(*b).shape()), go.data(), &av);
                }
                Op::Scale(a, f) => {
                    add_into(slot(&mut grads, *a, self.value(*a).shape()), go.data(), *f);
                }
                Op::MatMul(a, b) => {
                    let ga = matmul_bt(&go, self.value(*b));
                    add_into(slot(&mut grads, *a, self.value(*a).shape()), ga.data(), 1.0);
                    let gb = matmul_at(self.value(*a), &go);
                    add_into(slot(&mut grads, *b, self.value(*b).shape()), gb.data(), 1.0);
                }
                Op::LeakyRelu(a, slope) => {
                    let av = self.value(*a);
                    let g = slot(&mut grads, *a, av.shape());
                    for (k, &x) in av.data().iter().enumerate() {
                        g.data_mut()[k] += go.data()[k] * if x > 0.0 { 1.0 } else { *slope };
                    }
                }
                Op::Relu(a) => {
                    let av = self.value(*a);
                    let g = slot(&mut grads, *a, av.shape());
                    for (k, &x) in av.data().iter().enumerate() {
                        if x > 0.0 {
                            g.data_mut()[k] += go.data()[k];
                        }
                    }
                }
                Op::Exp(a) => {
                    let out = self.values[i].data().to_vec();
                    mul_add_into(slot(&mut grads, *a, self.value(*a).shape()), go.data(), &out);
                }
                Op::GatherRows(a, idx) => {
                    let cols = self.value(*a).cols();
                    let g = slot(&mut grads, *a, self.value(*a).shape());
                    for (k, &src) in idx.iter().enumerate() {
                        let dst = &mut g.data_mut()[src * cols..(src + 1) * cols];
                        for (d, v) in dst.iter_mut().zip(&go.data()[k * cols..(k + 1) * cols]) {
                            *d += v;
                        }
                    }
                }
                Op::ScatterAdd(a, tgt) => {
                    let cols = self.value(*a).cols();
                    let g = slot(&mut grads, *a, self.value(*a).shape());
                    for (k, &t) in tgt.iter().enumerate() {
                        let dst = &mut g.data_mut()[k * cols..(k + 1) * cols];
                        for (d, v) in dst.iter_mut().zip(&go.data()[t * cols..(t + 1) * cols]) {
                            *d += v;
                        }
                    }
                }
                Op::RowScale(m, s) => {
                    let (mr, mc) = self.value(*m).shape();
                    let sv = self.value(*s).data().to_vec();
                    let mv = self.value(*m).data().to_vec();
                    {
                        let gm = slot(&mut grads, *m, (mr, mc));
                        for r in 0..mr {
                            for c in 0..mc {
                                gm.data_mut()[r * mc + c] += go.data()[r * mc + c] * sv[r];
                            }
                        }
                    }
                    let gs = slot(&mut grads, *s, (mr, 1));
                    for r in 0..mr {
                        let mut acc = 0.0;
                        for c in 0..mc {
                            acc += go.data()[r * mc + c] * mv[r * mc + c];
                        }
                        gs.data_mut()[r] += acc;
                    }
                }
                Op::EdgeAggregate { features, coeffs, src, dst } => {
                    let hc = self.value(*features).cols();
                    let hv = self.value(*features).data().to_vec();
                    let cv = self.value(*coeffs).data().to_vec();
                    {
                        let gh = slot(&mut grads, *features, self.value(*features).shape());
                        for k in 0..src.len() {
                            let a = cv[k];
                            let gout = &go.data()[dst[k] * hc..(dst[k] + 1) * hc];
                            let acc = &mut gh.data_mut()[src[k] * hc..(src[k] + 1) * hc];
                            for (d, v) in acc.iter_mut().zip(gout) {
                                *d += a * v;
                            }
                        }
                    }
                    let gc = slot(&mut grads, *coeffs, (src.len(), 1));
                    for k in 0..src.len() {
                        let gout = &go.data()[dst[k] * hc..(dst[k] + 1) * hc];
                        let row = &hv[src[k] * hc..(src[k] + 1) * hc];
                        let mut acc = 0.0;
                        for (g, x) in gout.iter().zip(row) {
                            acc += g * x;
                        }
                        gc.data_mut()[k] += acc;
                    }
                }
                Op::NeighborhoodSoftmax(v, offsets) => {
                    let y = self.values[i].data().to_vec();
                    let g = slot(&mut grads, *v, self.value(*v).shape());
                    for w in offsets.windows(2) {
                        let (lo, hi) = (w[0], w[1]);
                        let mut dot = 0.0;
                        for k in lo..hi {
                            dot += go.data()[k] * y[k];
                        }
                        for k in lo..hi {
                            g.data_mut()[k] += y[k] * (go.data()[k] - dot);
                        }
                    }
                }
                Op::FrobeniusSq(a) => {
                    let s = go.data()[0];
                    let av = self.value(*a).data().to_vec();
                    let g = slot(&mut grads, *a, self.value(*a).shape());
                    for (d, x) in g.data_mut().iter_mut().zip(&av) {
                        *d += 2.0 * x * s;
                    }
                }
                Op::ReduceSum(a) => {
                    let s = go.data()[0];
                    let g = slot(&mut grads, *a, self.value(*a).shape());
                    for d in g.data_mut() {
                        *d += s;
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients produced by [`Tape::backward`], queryable per tensor id.
pub struct Gradients {
    grads: Vec<Option<Tensor2>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. the given tensor, or `None` when the
    /// loss did not depend on it (treat as zero).
    pub fn get(&self, id: TensorId) -> Option<&Tensor2> {
        self.grads[id.0].as_ref()
    }

    /// Owned gradient, zero-filled at the given shape when absent.
    pub fn get_or_zeros(&self, id: TensorId, rows: usize, cols: usize) -> Tensor2 {
        match self.get(id) {
            Some(g) => g.clone(),
            None => Tensor2::zeros(rows, cols),
        }
    }
}

fn valid_offsets(offsets: &[usize], rows: usize) -> bool {
    offsets.first() == Some(&0)
        && offsets.last() == Some(&rows)
        && offsets.windows(2).all(|w| w[0] <= w[1])
}

fn slot<'a>(grads: &'a mut [Option<Tensor2>], id: TensorId, shape: (usize, usize)) -> &'a mut Tensor2 {
    grads[id.0].get_or_insert_with(|| Tensor2::zeros(shape.0, shape.1))
}

fn add_into(dst: &mut Tensor2, src: &[f64], factor: f64) {
    for (d, s) in dst.data_mut().iter_mut().zip(src) {
        *d += s * factor;
    }
}

fn mul_add_into(dst: &mut Tensor2, a: &[f64], b: &[f64]) {
    for ((d, x), y) in dst.data_mut().iter_mut().zip(a).zip(b) {
        *d += x * y;
    }
}

/// Work threshold below which matmul stays on one thread.
#[cfg(feature = "parallel")]
const PAR_MATMUL_MIN_FLOPS: usize = 1 << 17;

/// `a * b`. Row-blocked; each output row is accumulated in k-order, so the
/// result does not depend on how rows are distributed over threads.
pub(crate) fn matmul_raw(a: &Tensor2, b: &Tensor2) -> Tensor2 {
    let (ar, ac) = a.shape();
    let bc = b.cols();
    let mut out = Tensor2::zeros(ar, bc);

    let row_job = |r: usize, out_row: &mut [f64]| {
        let arow = a.row(r);
        for (k, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = b.row(k);
            for (o, &bv) in out_row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    };

    #[cfg(feature = "parallel")]
    {
        if ar * ac * bc >= PAR_MATMUL_MIN_FLOPS {
            out.data_mut()
                .par_chunks_mut(bc)
                .enumerate()
                .for_each(|(r, row)| row_job(r, row));
            return out;
        }
    }
    for r in 0..ar {
        row_job(r, &mut out.data_mut()[r * bc..(r + 1) * bc]);
    }
    out
}

/// `go * b^T` without materializing the transpose.
fn matmul_bt(go: &Tensor2, b: &Tensor2) -> Tensor2 {
    let (gr, gc) = go.shape();
    let br = b.rows();
    debug_assert_eq!(gc, b.cols());
    let mut out = Tensor2::zeros(gr, br);
    for r in 0..gr {
        let grow = go.row(r);
        for j in 0..br {
            let brow = b.row(j);
            let mut acc = 0.0;
            for (g, x) in grow.iter().zip(brow) {
                acc += g * x;
            }
            out.set(r, j, acc);
        }
    }
    out
}

/// `a^T * go` without materializing the transpose.
fn matmul_at(a: &Tensor2, go: &Tensor2) -> Tensor2 {
    let (ar, ac) = a.shape();
    let gc = go.cols();
    debug_assert_eq!(ar, go.rows());
    let mut out = Tensor2::zeros(ac, gc);
    for r in 0..ar {
        let arow = a.row(r);
        let grow = go.row(r);
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out.data_mut()[i * gc..(i + 1) * gc];
            for (o, &g) in orow.iter_mut().zip(grow) {
                *o += av * g;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor2 {
        Tensor2::from_vec(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn leaky_relu_matches_definition() {
        let mut tape = Tape::new();
        let x = tape.input(t(1, 3, &[-1.0, 0.0, 2.0]));
        let y = tape.leaky_relu(x, 0.2).unwrap();
        assert_eq!(tape.value(y).data(), &[-0.2, 0.0, 2.0]);
    }

    #[test]
    fn softmax_of_singleton_group_is_one() {
        let mut tape = Tape::new();
        let x = tape.input(t(3, 1, &[5.0, -2.0, 0.3]));
        let y = tape
            .neighborhood_softmax(x, Arc::new(vec![0, 1, 3]))
            .unwrap();
        let v = tape.value(y).data();
        assert_eq!(v[0], 1.0);
        assert!((v[1] + v[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn frobenius_of_self_difference_is_zero() {
        let mut tape = Tape::new();
        let x = tape.input(t(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let d = tape.sub(x, x).unwrap();
        let f = tape.frobenius_sq(d).unwrap();
        assert_eq!(tape.scalar_value(f).unwrap(), 0.0);
    }

    #[test]
    fn gradient_of_sum_is_all_ones() {
        let mut tape = Tape::new();
        let w = tape.input(t(2, 3, &[1.0, -2.0, 0.5, 3.0, 4.0, -1.0]));
        let s = tape.reduce_sum(w).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn gradient_of_least_squares_matches_closed_form() {
        // loss = ||A W - B||_F^2, grad_W = 2 A^T (A W - B)
        let a = t(3, 2, &[1.0, 2.0, -1.0, 0.5, 3.0, 1.0]);
        let w0 = t(2, 2, &[0.2, -0.3, 1.1, 0.7]);
        let b = t(3, 2, &[1.0, 0.0, 0.0, 1.0, 2.0, -1.0]);

        let mut tape = Tape::new();
        let ai = tape.input(a.clone());
        let wi = tape.input(w0.clone());
        let bi = tape.input(b.clone());
        let aw = tape.matmul(ai, wi).unwrap();
        let d = tape.sub(aw, bi).unwrap();
        let loss = tape.frobenius_sq(d).unwrap();
        let grads = tape.backward(loss).unwrap();
        let gw = grads.get(wi).unwrap();

        // closed form
        let aw = matmul_raw(&a, &w0);
        let mut resid = Tensor2::zeros(3, 2);
        for k in 0..6 {
            resid.data_mut()[k] = aw.data()[k] - b.data()[k];
        }
        let expected = matmul_at(&a, &resid);
        for k in 0..4 {
            assert!((gw.data()[k] - 2.0 * expected.data()[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn non_participating_input_has_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.input(t(1, 2, &[1.0, 2.0]));
        let unused = tape.input(t(1, 2, &[5.0, 6.0]));
        let s = tape.reduce_sum(x).unwrap();
        let grads = tape.backward(s).unwrap();
        assert!(grads.get(unused).is_none());
        assert_eq!(grads.get_or_zeros(unused, 1, 2).data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_finite_result_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.input(t(1, 1, &[1e308]));
        let err = tape.exp(x).unwrap_err();
        assert_eq!(err, NumericError::NonFinite { op: "exp" });
    }

    #[test]
    fn loss_must_be_scalar() {
        let mut tape = Tape::new();
        let x = tape.input(t(2, 2, &[1.0; 4]));
        assert!(matches!(
            tape.backward(x),
            Err(NumericError::LossNotScalar { rows: 2, cols: 2 })
        ));
    }

    #[test]
    fn fused_edge_aggregate_matches_gather_scale_scatter() {
        let h = t(4, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 2.0, 0.0, 1.0, -2.0, 4.0, 4.0, 4.0]);
        let coeffs = t(5, 1, &[0.5, 0.25, 1.0, -1.0, 2.0]);
        let src = Arc::new(vec![0usize, 1, 2, 3, 0]);
        let dst = Arc::new(vec![1usize, 1, 0, 2, 2]);

        let mut tape = Tape::new();
        let hi = tape.input(h.clone());
        let ci = tape.input(coeffs.clone());
        let fused = tape.edge_aggregate(hi, ci, src.clone(), dst.clone(), 4).unwrap();

        let mut tape2 = Tape::new();
        let hi2 = tape2.input(h);
        let ci2 = tape2.input(coeffs);
        let gathered = tape2.gather_rows(hi2, src).unwrap();
        let scaled = tape2.row_scale(gathered, ci2).unwrap();
        let scattered = tape2.scatter_add(scaled, dst, 4).unwrap();

        assert_eq!(tape.value(fused), tape2.value(scattered));

        // gradients agree too
        let l1 = tape.frobenius_sq(fused).unwrap();
        let l2 = tape2.frobenius_sq(scattered).unwrap();
        let g1 = tape.backward(l1).unwrap();
        let g2 = tape2.backward(l2).unwrap();
        assert!(g1
            .get(hi)
            .unwrap()
            .max_abs_diff(g2.get(hi2).unwrap()) < 1e-14);
        assert!(g1
            .get(ci)
            .unwrap()
            .max_abs_diff(g2.get(ci2).unwrap()) < 1e-14);
    }
}
