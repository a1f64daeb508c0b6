//! Define-by-run computation tape over dense row-major 2-D tensors.
//!
//! Every op appends a node holding its forward value; [`Tape::backward`]
//! sweeps the nodes in reverse creation order, which is always a valid
//! topological order, and accumulates analytic gradients. Parameter leaves
//! are deduplicated so repeated use of a parameter accumulates into a single
//! gradient buffer.

use super::store::{ParamId, ParameterStore};
use std::collections::HashMap;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Read-only view of a node: shape, forward values, gradient if computed.
#[derive(Debug, Clone, Copy)]
pub struct Tensor<'t> {
    pub rows: usize,
    pub cols: usize,
    pub values: &'t [f64],
    pub grad: Option<&'t [f64]>,
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Add(NodeId, NodeId),
    /// `[r, c] + [1, c]`, the row vector broadcast over rows.
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    /// `a (r x k) . b (k x c)`; when `tb` is set, `b`'s buffer stores the
    /// transpose `(c x k)`.
    MatMul {
        a: NodeId,
        b: NodeId,
        tb: bool,
    },
    Relu(NodeId),
    Tanh(NodeId),
    Ln(NodeId),
    SoftmaxRows(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    },
    MeanRows(NodeId),
    Sum(NodeId),
    GatherRow {
        x: NodeId,
        row: usize,
    },
    GatherElem {
        x: NodeId,
        row: usize,
        col: usize,
    },
    ConcatRows(Vec<NodeId>),
    SliceCols {
        x: NodeId,
        start: usize,
        len: usize,
    },
    ConcatCols(Vec<NodeId>),
    /// Weighted sum of scalar nodes.
    AffineSum(Vec<(f64, NodeId)>),
}

struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    grad: Option<Vec<f64>>,
    op: Op,
}

/// Recording tape bound to the parameter store it reads weights from.
pub struct Tape<'s> {
    store: &'s ParameterStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
}

/// dgemm wrapper: `C (m x n) = alpha * A (m x k) . B (k x n) + beta * C`.
/// `ta`/`tb` flag buffers that store the transpose of the logical operand.
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParameterStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn store(&self) -> &ParameterStore {
        self.store
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> NodeId {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            value,
            grad: None,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after `mark`. Used to bound memory when a
    /// tape serves many forward-only rollouts of one encoded instance.
    pub fn truncate(&mut self, mark: usize) {
        self.nodes.truncate(mark);
        self.param_nodes.retain(|_, id| id.0 < mark);
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        let node = &self.nodes[id.0];
        assert!(
            node.rows == 1 && node.cols == 1,
            "scalar() on a {}x{} node",
            node.rows,
            node.cols
        );
        node.value[0]
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let node = &self.nodes[id.0];
        (node.rows, node.cols)
    }

    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn tensor(&self, id: NodeId) -> Tensor<'_> {
        let node = &self.nodes[id.0];
        Tensor {
            rows: node.rows,
            cols: node.cols,
            values: &node.value,
            grad: node.grad.as_deref(),
        }
    }

    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> NodeId {
        assert_eq!(
            value.len(),
            rows * cols,
            "constant data length {} does not match shape {rows}x{cols}",
            value.len()
        );
        self.push(rows, cols, value, Op::Constant)
    }

    /// Leaf bound to a stored parameter; deduplicated per tape.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(&node) = self.param_nodes.get(&id) {
            return node;
        }
        let (rows, cols) = self.store.shape(id);
        let value = self.store.value(id).to_vec();
        let node = self.push(rows, cols, value, Op::Param(id));
        self.param_nodes.insert(id, node);
        node
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        assert!(
            ra == rb && ca == cb,
            "add shape mismatch: {ra}x{ca} vs {rb}x{cb}"
        );
        let value = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        self.push(ra, ca, value, Op::Add(a, b))
    }

    pub fn add_row(&mut self, x: NodeId, row: NodeId) -> NodeId {
        let (r, c) = self.shape(x);
        let (rr, rc) = self.shape(row);
        assert!(
            rr == 1 && rc == c,
            "add_row shape mismatch: {r}x{c} vs {rr}x{rc}"
        );
        let mut value = self.nodes[x.0].value.clone();
        let rowv = &self.nodes[row.0].value;
        for chunk in value.chunks_mut(c) {
            for (v, b) in chunk.iter_mut().zip(rowv) {
                *v += b;
            }
        }
        self.push(r, c, value, Op::AddRow(x, row))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let (r, c) = self.shape(x);
        let value = self.nodes[x.0].value.iter().map(|v| v * factor).collect();
        self.push(r, c, value, Op::Scale(x, factor))
    }

    /// `a (r x k) . b (k x c)`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ra, ka) = self.shape(a);
        let (kb, cb) = self.shape(b);
        assert_eq!(
            ka, kb,
            "matmul shape mismatch: {ra}x{ka} . {kb}x{cb}"
        );
        let mut value = vec![0.0; ra * cb];
        gemm(
            ra,
            ka,
            cb,
            1.0,
            &self.nodes[a.0].value,
            false,
            &self.nodes[b.0].value,
            false,
            0.0,
            &mut value,
        );
        self.push(ra, cb, value, Op::MatMul { a, b, tb: false })
    }

    /// `a (r x k) . b^T` where `b` is stored `(c x k)`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ra, ka) = self.shape(a);
        let (rb, kb) = self.shape(b);
        assert_eq!(
            ka, kb,
            "matmul_nt shape mismatch: {ra}x{ka} . ({rb}x{kb})^T"
        );
        let mut value = vec![0.0; ra * rb];
        gemm(
            ra,
            ka,
            rb,
            1.0,
            &self.nodes[a.0].value,
            false,
            &self.nodes[b.0].value,
            true,
            0.0,
            &mut value,
        );
        self.push(ra, rb, value, Op::MatMul { a, b, tb: true })
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let (r, c) = self.shape(x);
        let value = self.nodes[x.0].value.iter().map(|v| v.max(0.0)).collect();
        self.push(r, c, value, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let (r, c) = self.shape(x);
        let value = self.nodes[x.0].value.iter().map(|v| v.tanh()).collect();
        self.push(r, c, value, Op::Tanh(x))
    }

    /// Elementwise natural log; inputs must be positive.
    pub fn ln(&mut self, x: NodeId) -> NodeId {
        let (r, c) = self.shape(x);
        let value = self.nodes[x.0].value.iter().map(|v| v.ln()).collect();
        self.push(r, c, value, Op::Ln(x))
    }

    /// Row-wise softmax. `-inf` entries map to exactly zero probability; a row
    /// of only `-inf` is a contract violation.
    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let (r, c) = self.shape(x);
        let mut value = vec![0.0; r * c];
        for (row_out, row_in) in value
            .chunks_mut(c)
            .zip(self.nodes[x.0].value.chunks(c))
        {
            let max = row_in.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(
                max.is_finite(),
                "softmax over a degenerate distribution: no finite entry in row"
            );
            let mut sum = 0.0;
            for (o, &v) in row_out.iter_mut().zip(row_in) {
                *o = (v - max).exp();
                sum += *o;
            }
            for o in row_out.iter_mut() {
                *o /= sum;
            }
        }
        self.push(r, c, value, Op::SoftmaxRows(x))
    }

    /// Row-wise normalization to zero mean and unit variance (biased, with
    /// `eps` inside the square root), then `gamma .* xhat + beta`.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> NodeId {
        let (r, c) = self.shape(x);
        let (gr, gc) = self.shape(gamma);
        let (br, bc) = self.shape(beta);
        assert!(
            gr == 1 && gc == c && br == 1 && bc == c,
            "layer_norm affine shape mismatch: x {r}x{c}, gamma {gr}x{gc}, beta {br}x{bc}"
        );
        let mut value = vec![0.0; r * c];
        {
            let g = &self.nodes[gamma.0].value;
            let b = &self.nodes[beta.0].value;
            for (row_out, row_in) in value.chunks_mut(c).zip(self.nodes[x.0].value.chunks(c)) {
                let mean = row_in.iter().sum::<f64>() / c as f64;
                let var = row_in.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
                let inv = 1.0 / (var + eps).sqrt();
                for j in 0..c {
                    row_out[j] = g[j] * ((row_in[j] - mean) * inv) + b[j];
                }
            }
        }
        self.push(r, c, value, Op::LayerNorm { x, gamma, beta, eps })
    }

    /// Column means: `[r, c] -> [1, c]`.
    pub fn mean_rows(&mut self, x: NodeId) -> NodeId {
        let (r, c) = self.shape(x);
        let mut value = vec![0.0; c];
        for row in self.nodes[x.0].value.chunks(c) {
            for (o, v) in value.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in value.iter_mut() {
            *o /= r as f64;
        }
        self.push(1, c, value, Op::MeanRows(x))
    }

    /// Sum of all entries.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total: f64 = self.nodes[x.0].value.iter().sum();
        self.push(1, 1, vec![total], Op::Sum(x))
    }

    pub fn gather_row(&mut self, x: NodeId, row: usize) -> NodeId {
        let (r, c) = self.shape(x);
        assert!(row < r, "gather_row {row} out of range for {r}x{c}");
        let value = self.nodes[x.0].value[row * c..(row + 1) * c].to_vec();
        self.push(1, c, value, Op::GatherRow { x, row })
    }

    pub fn gather_elem(&mut self, x: NodeId, row: usize, col: usize) -> NodeId {
        let (r, c) = self.shape(x);
        assert!(
            row < r && col < c,
            "gather_elem ({row}, {col}) out of range for {r}x{c}"
        );
        let value = vec![self.nodes[x.0].value[row * c + col]];
        self.push(1, 1, value, Op::GatherElem { x, row, col })
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let c = self.shape(parts[0]).1;
        let mut rows = 0;
        let mut value = Vec::new();
        for &p in parts {
            let (pr, pc) = self.shape(p);
            assert_eq!(pc, c, "concat_rows column mismatch: {pc} vs {c}");
            rows += pr;
            value.extend_from_slice(&self.nodes[p.0].value);
        }
        self.push(rows, c, value, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let (r, c) = self.shape(x);
        assert!(
            start + len <= c,
            "slice_cols {start}..{} out of range for {r}x{c}",
            start + len
        );
        let mut value = Vec::with_capacity(r * len);
        for row in self.nodes[x.0].value.chunks(c) {
            value.extend_from_slice(&row[start..start + len]);
        }
        self.push(r, len, value, Op::SliceCols { x, start, len })
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let r = self.shape(parts[0]).0;
        let total_c: usize = parts
            .iter()
            .map(|&p| {
                let (pr, pc) = self.shape(p);
                assert_eq!(pr, r, "concat_cols row mismatch: {pr} vs {r}");
                pc
            })
            .sum();
        let mut value = vec![0.0; r * total_c];
        let mut offset = 0;
        for &p in parts {
            let pc = self.shape(p).1;
            for (i, row) in self.nodes[p.0].value.chunks(pc).enumerate() {
                value[i * total_c + offset..i * total_c + offset + pc].copy_from_slice(row);
            }
            offset += pc;
        }
        self.push(r, total_c, value, Op::ConcatCols(parts.to_vec()))
    }

    /// Weighted sum of scalar nodes: `sum coeff_i * term_i`.
    pub fn affine_sum(&mut self, terms: &[(f64, NodeId)]) -> NodeId {
        let mut total = 0.0;
        for &(coeff, id) in terms {
            let (r, c) = self.shape(id);
            assert!(r == 1 && c == 1, "affine_sum term is {r}x{c}, expected scalar");
            total += coeff * self.nodes[id.0].value[0];
        }
        self.push(1, 1, vec![total], Op::AffineSum(terms.to_vec()))
    }

    fn accumulate(grad: &mut Option<Vec<f64>>, len: usize) -> &mut [f64] {
        grad.get_or_insert_with(|| vec![0.0; len])
    }

    /// Reverse sweep from a scalar loss. Existing gradients are discarded, so
    /// repeated calls are deterministic.
    pub fn backward(&mut self, loss: NodeId) {
        {
            let node = &self.nodes[loss.0];
            assert!(
                node.rows == 1 && node.cols == 1,
                "backward on a non-scalar {}x{} node",
                node.rows,
                node.cols
            );
        }
        for node in self.nodes.iter_mut() {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..self.nodes.len()).rev() {
            let (head, tail) = self.nodes.split_at_mut(i);
            let node = &mut tail[0];
            let Some(dy) = node.grad.take() else {
                continue;
            };
            let (rows, cols) = (node.rows, node.cols);
            match &node.op {
                Op::Constant | Op::Param(_) => {
                    node.grad = Some(dy);
                    continue;
                }
                Op::Add(a, b) => {
                    for (g, d) in Self::accumulate(&mut head[a.0].grad, dy.len()).iter_mut().zip(&dy) {
                        *g += d;
                    }
                    for (g, d) in Self::accumulate(&mut head[b.0].grad, dy.len()).iter_mut().zip(&dy) {
                        *g += d;
                    }
                }
                Op::AddRow(x, row) => {
                    for (g, d) in Self::accumulate(&mut head[x.0].grad, dy.len()).iter_mut().zip(&dy) {
                        *g += d;
                    }
                    let grow = Self::accumulate(&mut head[row.0].grad, cols);
                    for chunk in dy.chunks(cols) {
                        for (g, d) in grow.iter_mut().zip(chunk) {
                            *g += d;
                        }
                    }
                }
                Op::Scale(x, factor) => {
                    let f = *factor;
                    for (g, d) in Self::accumulate(&mut head[x.0].grad, dy.len()).iter_mut().zip(&dy) {
                        *g += f * d;
                    }
                }
                Op::MatMul { a, b, tb } => {
                    let (a, b, tb) = (*a, *b, *tb);
                    let (ra, ka) = (head[a.0].rows, head[a.0].cols);
                    // dA += dC . B^T
                    {
                        let bval = std::mem::take(&mut head[b.0].value);
                        let ga = Self::accumulate(&mut head[a.0].grad, ra * ka);
                        gemm(ra, cols, ka, 1.0, &dy, false, &bval, !tb, 1.0, ga);
                        head[b.0].value = bval;
                    }
                    // dB
                    {
                        let aval = std::mem::take(&mut head[a.0].value);
                        let blen = head[b.0].rows * head[b.0].cols;
                        let gb = Self::accumulate(&mut head[b.0].grad, blen);
                        if tb {
                            // buffer holds B^T (c x k): dB^T += dC^T . A
                            gemm(cols, ra, ka, 1.0, &dy, true, &aval, false, 1.0, gb);
                        } else {
                            // dB += A^T . dC
                            gemm(ka, ra, cols, 1.0, &aval, true, &dy, false, 1.0, gb);
                        }
                        head[a.0].value = aval;
                    }
                }
                Op::Relu(x) => {
                    // y > 0 iff x > 0, so the mask comes from the output
                    let gx = Self::accumulate(&mut head[x.0].grad, dy.len());
                    for ((g, d), y) in gx.iter_mut().zip(&dy).zip(&node.value) {
                        if *y > 0.0 {
                            *g += d;
                        }
                    }
                }
                Op::Tanh(x) => {
                    let gx = Self::accumulate(&mut head[x.0].grad, dy.len());
                    for ((g, d), y) in gx.iter_mut().zip(&dy).zip(&node.value) {
                        *g += d * (1.0 - y * y);
                    }
                }
                Op::Ln(x) => {
                    let xn = &mut head[x.0];
                    let gx = xn.grad.get_or_insert_with(|| vec![0.0; dy.len()]);
                    for ((g, d), v) in gx.iter_mut().zip(&dy).zip(&xn.value) {
                        *g += d / v;
                    }
                }
                Op::SoftmaxRows(x) => {
                    let gx = Self::accumulate(&mut head[x.0].grad, dy.len());
                    for ((grow, drow), yrow) in gx
                        .chunks_mut(cols)
                        .zip(dy.chunks(cols))
                        .zip(node.value.chunks(cols))
                    {
                        let dot: f64 = drow.iter().zip(yrow).map(|(d, y)| d * y).sum();
                        for j in 0..cols {
                            grow[j] += (drow[j] - dot) * yrow[j];
                        }
                    }
                }
                Op::LayerNorm { x, gamma, beta, eps } => {
                    let (x, gamma, beta, eps) = (*x, *gamma, *beta, *eps);
                    let xv = head[x.0].value.clone();
                    let gv = head[gamma.0].value.clone();
                    // d_beta
                    {
                        let gb = Self::accumulate(&mut head[beta.0].grad, cols);
                        for drow in dy.chunks(cols) {
                            for (g, d) in gb.iter_mut().zip(drow) {
                                *g += d;
                            }
                        }
                    }
                    let mut dgamma = vec![0.0; cols];
                    {
                        let gx = Self::accumulate(&mut head[x.0].grad, rows * cols);
                        for ((grow, drow), xrow) in
                            gx.chunks_mut(cols).zip(dy.chunks(cols)).zip(xv.chunks(cols))
                        {
                            let mean = xrow.iter().sum::<f64>() / cols as f64;
                            let var =
                                xrow.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
                            let inv = 1.0 / (var + eps).sqrt();
                            let xhat: Vec<f64> = xrow.iter().map(|v| (v - mean) * inv).collect();
                            for j in 0..cols {
                                dgamma[j] += drow[j] * xhat[j];
                            }
                            let dxhat: Vec<f64> =
                                drow.iter().zip(&gv).map(|(d, g)| d * g).collect();
                            let mean_dxhat = dxhat.iter().sum::<f64>() / cols as f64;
                            let mean_dxhat_xhat = dxhat
                                .iter()
                                .zip(&xhat)
                                .map(|(d, h)| d * h)
                                .sum::<f64>()
                                / cols as f64;
                            for j in 0..cols {
                                grow[j] += (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat) * inv;
                            }
                        }
                    }
                    let gg = Self::accumulate(&mut head[gamma.0].grad, cols);
                    for (g, d) in gg.iter_mut().zip(&dgamma) {
                        *g += d;
                    }
                }
                Op::MeanRows(x) => {
                    let r = head[x.0].rows;
                    let scale = 1.0 / r as f64;
                    let gx = Self::accumulate(&mut head[x.0].grad, r * cols);
                    for grow in gx.chunks_mut(cols) {
                        for (g, d) in grow.iter_mut().zip(&dy) {
                            *g += scale * d;
                        }
                    }
                }
                Op::Sum(x) => {
                    let len = head[x.0].rows * head[x.0].cols;
                    let gx = Self::accumulate(&mut head[x.0].grad, len);
                    for g in gx.iter_mut() {
                        *g += dy[0];
                    }
                }
                Op::GatherRow { x, row } => {
                    let (row, c) = (*row, head[x.0].cols);
                    let len = head[x.0].rows * c;
                    let gx = Self::accumulate(&mut head[x.0].grad, len);
                    for (g, d) in gx[row * c..(row + 1) * c].iter_mut().zip(&dy) {
                        *g += d;
                    }
                }
                Op::GatherElem { x, row, col } => {
                    let idx = row * head[x.0].cols + col;
                    let len = head[x.0].rows * head[x.0].cols;
                    let gx = Self::accumulate(&mut head[x.0].grad, len);
                    gx[idx] += dy[0];
                }
                Op::ConcatRows(parts) => {
                    let parts = parts.clone();
                    let mut offset = 0;
                    for p in parts {
                        let len = head[p.0].rows * head[p.0].cols;
                        let gp = Self::accumulate(&mut head[p.0].grad, len);
                        for (g, d) in gp.iter_mut().zip(&dy[offset..offset + len]) {
                            *g += d;
                        }
                        offset += len;
                    }
                }
                Op::SliceCols { x, start, len } => {
                    let (start, len) = (*start, *len);
                    let (xr, xc) = (head[x.0].rows, head[x.0].cols);
                    let gx = Self::accumulate(&mut head[x.0].grad, xr * xc);
                    for (i, drow) in dy.chunks(len).enumerate() {
                        for (g, d) in gx[i * xc + start..i * xc + start + len].iter_mut().zip(drow)
                        {
                            *g += d;
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let parts = parts.clone();
                    let mut offset = 0;
                    for p in parts {
                        let (pr, pc) = (head[p.0].rows, head[p.0].cols);
                        let gp = Self::accumulate(&mut head[p.0].grad, pr * pc);
                        for i in 0..pr {
                            for (g, d) in gp[i * pc..(i + 1) * pc]
                                .iter_mut()
                                .zip(&dy[i * cols + offset..i * cols + offset + pc])
                            {
                                *g += d;
                            }
                        }
                        offset += pc;
                    }
                }
                Op::AffineSum(terms) => {
                    let terms = terms.clone();
                    for (coeff, id) in terms {
                        let g = Self::accumulate(&mut head[id.0].grad, 1);
                        g[0] += coeff * dy[0];
                    }
                }
            }
            node.grad = Some(dy);
        }
    }

    /// Folds parameter-leaf gradients into a flat vector laid out per the
    /// store's parameter order. Zero where a parameter was unused.
    pub fn param_grads(&self) -> Vec<f64> {
        let mut flat = vec![0.0; self.store.total_len()];
        for (&pid, &node) in &self.param_nodes {
            if let Some(grad) = self.nodes[node.0].grad.as_deref() {
                let offset = self.store.offset(pid);
                for (g, d) in flat[offset..offset + grad.len()].iter_mut().zip(grad) {
                    *g += d;
                }
            }
        }
        flat
    }
}

#[cfg(test)]
mod tests {
    use super::super::store::{Init, ParameterStore};
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn empty_store() -> ParameterStore {
        ParameterStore::new()
    }

    #[test]
    fn softmax_of_equal_entries_is_uniform() {
        let store = empty_store();
        let mut tape = Tape::new(&store);
        let x = tape.constant(1, 2, vec![0.0, 0.0]);
        let y = tape.softmax_rows(x);
        assert_eq!(tape.value(y), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_maps_neg_infinity_to_exact_zero() {
        let store = empty_store();
        let mut tape = Tape::new(&store);
        let x = tape.constant(1, 2, vec![f64::NEG_INFINITY, 0.0]);
        let y = tape.softmax_rows(x);
        assert_eq!(tape.value(y), &[0.0, 1.0]);
    }

    #[test]
    fn softmax_is_proportional_to_exponentials() {
        let store = empty_store();
        let mut tape = Tape::new(&store);
        let x = tape.constant(1, 3, vec![1.0, 2.0, 3.0]);
        let y = tape.softmax_rows(x);
        let v = tape.value(y);
        let sum: f64 = v.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!((v[1] / v[0] - 1.0f64.exp()).abs() < 1e-12);
        assert!((v[2] / v[1] - 1.0f64.exp()).abs() < 1e-12);
    }

    #[test]
    #[should_panic(expected = "degenerate")]
    fn softmax_rejects_all_masked_rows() {
        let store = empty_store();
        let mut tape = Tape::new(&store);
        let x = tape.constant(1, 2, vec![f64::NEG_INFINITY, f64::NEG_INFINITY]);
        tape.softmax_rows(x);
    }

    #[test]
    fn layer_norm_of_constant_row_is_zero() {
        let store = empty_store();
        let mut tape = Tape::new(&store);
        let x = tape.constant(1, 4, vec![3.7; 4]);
        let gamma = tape.constant(1, 4, vec![1.0; 4]);
        let beta = tape.constant(1, 4, vec![0.0; 4]);
        let y = tape.layer_norm(x, gamma, beta, 1e-12);
        for v in tape.value(y) {
            assert!(v.abs() < 1e-5);
        }
    }

    #[test]
    fn layer_norm_preserves_already_normalized_rows() {
        let store = empty_store();
        let mut tape = Tape::new(&store);
        let x = tape.constant(1, 2, vec![1.0, -1.0]);
        let gamma = tape.constant(1, 2, vec![1.0; 2]);
        let beta = tape.constant(1, 2, vec![0.0; 2]);
        let y = tape.layer_norm(x, gamma, beta, 1e-15);
        let v = tape.value(y);
        assert!((v[0] - 1.0).abs() < 1e-7);
        assert!((v[1] + 1.0).abs() < 1e-7);
    }

    #[test]
    fn layer_norm_output_has_zero_mean_unit_variance() {
        let store = empty_store();
        let mut tape = Tape::new(&store);
        let data: Vec<f64> = (0..8).map(|i| (i as f64).sin() * 3.0 + 1.0).collect();
        let x = tape.constant(1, 8, data);
        let gamma = tape.constant(1, 8, vec![1.0; 8]);
        let beta = tape.constant(1, 8, vec![0.0; 8]);
        let y = tape.layer_norm(x, gamma, beta, 1e-12);
        let v = tape.value(y);
        let mean: f64 = v.iter().sum::<f64>() / 8.0;
        let var: f64 = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 8.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-6);
    }

    #[test]
    fn backward_of_sum_of_squares() {
        // loss = sum(x^2) via x .* x implemented with elementwise ops:
        // reuse matmul with a diagonal trick instead: loss = x . x^T
        let store = empty_store();
        let mut tape = Tape::new(&store);
        let x = tape.constant(1, 2, vec![1.0, 2.0]);
        let loss = tape.matmul_nt(x, x);
        tape.backward(loss);
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn unused_parameter_gets_exactly_zero_grad() {
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let used = store.add("used", 1, 2, Init::uniform_fan_in(2), &mut rng);
        let unused = store.add("unused", 1, 2, Init::uniform_fan_in(2), &mut rng);
        let mut tape = Tape::new(&store);
        let p = tape.param(used);
        let _also_on_tape = tape.param(unused);
        let loss = tape.sum(p);
        tape.backward(loss);
        let flat = tape.param_grads();
        assert_eq!(&flat[store.offset(used)..store.offset(used) + 2], &[1.0, 1.0]);
        assert_eq!(&flat[store.offset(unused)..store.offset(unused) + 2], &[0.0, 0.0]);
    }

    #[test]
    #[should_panic(expected = "non-scalar")]
    fn backward_requires_scalar_loss() {
        let store = empty_store();
        let mut tape = Tape::new(&store);
        let x = tape.constant(1, 2, vec![1.0, 2.0]);
        tape.backward(x);
    }

    #[test]
    fn repeated_backward_is_deterministic() {
        let store = empty_store();
        let mut tape = Tape::new(&store);
        let x = tape.constant(1, 3, vec![0.5, -1.0, 2.0]);
        let y = tape.tanh(x);
        let loss = tape.sum(y);
        tape.backward(loss);
        let first = tape.grad(x).unwrap().to_vec();
        tape.backward(loss);
        assert_eq!(tape.grad(x).unwrap(), first.as_slice());
    }

    #[test]
    fn matmul_agrees_with_naive_reference() {
        let store = empty_store();
        let mut tape = Tape::new(&store);
        let a_data: Vec<f64> = (0..6).map(|i| i as f64 * 0.5 - 1.0).collect();
        let b_data: Vec<f64> = (0..12).map(|i| (i as f64).cos()).collect();
        let a = tape.constant(2, 3, a_data.clone());
        let b = tape.constant(3, 4, b_data.clone());
        let c = tape.matmul(a, b);
        for i in 0..2 {
            for j in 0..4 {
                let expect: f64 = (0..3).map(|k| a_data[i * 3 + k] * b_data[k * 4 + j]).sum();
                assert!((tape.value(c)[i * 4 + j] - expect).abs() < 1e-12);
            }
        }
        // and the transposed variant
        let bt_data: Vec<f64> = {
            let mut t = vec![0.0; 12];
            for k in 0..3 {
                for j in 0..4 {
                    t[j * 3 + k] = b_data[k * 4 + j];
                }
            }
            t
        };
        let bt = tape.constant(4, 3, bt_data);
        let c2 = tape.matmul_nt(a, bt);
        assert_eq!(tape.value(c), tape.value(c2));
    }

    #[test]
    fn slice_and_concat_cols_round_trip() {
        let store = empty_store();
        let mut tape = Tape::new(&store);
        let data: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let x = tape.constant(3, 4, data.clone());
        let left = tape.slice_cols(x, 0, 2);
        let right = tape.slice_cols(x, 2, 2);
        let back = tape.concat_cols(&[left, right]);
        assert_eq!(tape.value(back), data.as_slice());
    }

    #[test]
    fn truncate_discards_rollout_nodes() {
        let store = empty_store();
        let mut tape = Tape::new(&store);
        let x = tape.constant(1, 2, vec![1.0, 2.0]);
        let mark = tape.len();
        let y = tape.tanh(x);
        let _ = tape.sum(y);
        tape.truncate(mark);
        assert_eq!(tape.len(), mark);
    }
}
