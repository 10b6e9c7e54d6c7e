//! A small reverse-mode tape over [`Mat`] values.
//!
//! A [`Graph`] borrows a [`ParamSet`] read-only; every operation is evaluated
//! eagerly and recorded. [`Graph::backward`] walks the tape in reverse and
//! returns dense gradients for the parameters that were touched.

use crate::params::{Grads, ParamId, ParamSet};
use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    MatMulT(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    AddConst(NodeId),
    Scale(NodeId, f64),
    MulConst(NodeId, Mat),
    Relu(NodeId),
    Gather(NodeId, Vec<usize>),
    SelectRow(NodeId, usize),
    Stack(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    Softmax(NodeId),
    SumSquares(NodeId),
    CrossEntropy {
        logits: NodeId,
        targets: Vec<Option<usize>>,
        skip: usize,
        probs: Mat,
    },
    Sum(Vec<NodeId>),
}

#[derive(Debug)]
struct Node {
    value: Option<Mat>,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
}

const LN_EPS: f64 = 1e-8;

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        let node = &self.nodes[id.0];
        match (&node.op, &node.value) {
            (Op::Param(pid), _) => self.params.get(*pid),
            (_, Some(v)) => v,
            (_, None) => unreachable!("non-parameter node without a value"),
        }
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.shape(), (1, 1));
        v.data[0]
    }

    fn push(&mut self, value: Mat, op: Op) -> NodeId {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Mat) -> NodeId {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes[id.0] {
            return n;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let n = NodeId(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(n);
        n
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul_t(self.value(b));
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "sub shape mismatch");
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x - y).collect();
        let v = Mat::from_vec(va.rows, va.cols, data);
        self.push(v, Op::Sub(a, b))
    }

    /// Adds the 1×c row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let b = self.value(bias);
        assert_eq!(b.rows, 1, "add_row expects a row vector");
        let mut v = self.value(a).clone();
        assert_eq!(v.cols, b.cols, "add_row width mismatch");
        for r in 0..v.rows {
            for (x, y) in v.row_mut(r).iter_mut().zip(&b.data) {
                *x += y;
            }
        }
        self.push(v, Op::AddRow(a, bias))
    }

    pub fn add_const(&mut self, a: NodeId, c: &Mat) -> NodeId {
        let mut v = self.value(a).clone();
        v.add_assign(c);
        self.push(v, Op::AddConst(a))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    /// Elementwise product with a constant (dropout masks).
    pub fn mul_const(&mut self, a: NodeId, mask: Mat) -> NodeId {
        let va = self.value(a);
        assert_eq!(va.shape(), mask.shape(), "mul_const shape mismatch");
        let data = va.data.iter().zip(&mask.data).map(|(x, m)| x * m).collect();
        let v = Mat::from_vec(va.rows, va.cols, data);
        self.push(v, Op::MulConst(a, mask))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    /// Rows `indices` of `table`, stacked.
    pub fn gather(&mut self, table: NodeId, indices: &[usize]) -> NodeId {
        let t = self.value(table);
        let mut v = Mat::zeros(indices.len(), t.cols);
        for (r, &i) in indices.iter().enumerate() {
            v.row_mut(r).copy_from_slice(t.row(i));
        }
        self.push(v, Op::Gather(table, indices.to_vec()))
    }

    pub fn select_row(&mut self, a: NodeId, row: usize) -> NodeId {
        let v = Mat::row_vector(self.value(a).row(row).to_vec());
        self.push(v, Op::SelectRow(a, row))
    }

    /// Vertical concatenation.
    pub fn stack(&mut self, parts: &[NodeId]) -> NodeId {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols, cols, "stack width mismatch");
            data.extend_from_slice(&v.data);
            rows += v.rows;
        }
        self.push(Mat::from_vec(rows, cols, data), Op::Stack(parts.to_vec()))
    }

    /// Horizontal concatenation.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut v = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let pv = self.value(p);
                assert_eq!(pv.rows, rows, "concat_cols height mismatch");
                v.row_mut(r)[off..off + pv.cols].copy_from_slice(pv.row(r));
                off += pv.cols;
            }
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    /// Row-wise layer normalization with 1×c `gamma` and `beta`.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let xv = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let (rows, cols) = xv.shape();
        let mut xhat = Mat::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Mat::zeros(rows, cols);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(inv);
            for c in 0..cols {
                let h = (row[c] - mean) * inv;
                xhat.data[r * cols + c] = h;
                out.data[r * cols + c] = g.data[c] * h + b.data[c];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Row-wise softmax. Entries equal to `-inf` act as a mask.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        softmax_rows(&mut v);
        self.push(v, Op::Softmax(a))
    }

    /// Causal mask then softmax: row `i` attends to columns `0..=i`.
    pub fn causal_softmax(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        for r in 0..v.rows {
            for c in (r + 1)..v.cols {
                v.data[r * v.cols + c] = f64::NEG_INFINITY;
            }
        }
        softmax_rows(&mut v);
        self.push(v, Op::Softmax(a))
    }

    pub fn sum_squares(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data.iter().map(|x| x * x).sum::<f64>();
        self.push(Mat::filled(1, 1, s), Op::SumSquares(a))
    }

    /// `-log softmax(logits)[target]` for a 1×V row, ignoring the first
    /// `skip` columns (padding).
    pub fn cross_entropy(&mut self, logits: NodeId, target: usize, skip: usize) -> NodeId {
        assert_eq!(self.value(logits).rows, 1, "cross_entropy expects one row");
        self.cross_entropy_rows(logits, &[Some(target)], skip)
    }

    /// Summed cross-entropy over rows; rows with a `None` target are ignored.
    pub fn cross_entropy_rows(&mut self, logits: NodeId, targets: &[Option<usize>], skip: usize) -> NodeId {
        let l = self.value(logits);
        assert_eq!(l.rows, targets.len(), "cross_entropy target count mismatch");
        let mut probs = Mat::zeros(l.rows, l.cols);
        let mut loss = 0.0;
        for (r, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            assert!(t >= skip && t < l.cols, "cross_entropy target out of range");
            let row = &l.row(r)[skip..];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let lse = max + sum.ln();
            loss += lse - l.at(r, t);
            for (p, x) in probs.row_mut(r)[skip..].iter_mut().zip(row) {
                *p = (x - lse).exp();
            }
        }
        self.push(
            Mat::filled(1, 1, loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                skip,
                probs,
            },
        )
    }

    pub fn sum(&mut self, parts: &[NodeId]) -> NodeId {
        let first = self.value(parts[0]);
        let mut v = Mat::zeros(first.rows, first.cols);
        for &p in parts {
            v.add_assign(self.value(p));
        }
        self.push(v, Op::Sum(parts.to_vec()))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Grads {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar");
        let mut sink = Sink {
            graph: self,
            node_grads: (0..=loss.0).map(|_| None).collect(),
            param_grads: Grads::new(self.params.len()),
        };
        sink.node_grads[loss.0] = Some(Mat::filled(1, 1, 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = sink.node_grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    sink.buf(*a).add_matmul_t(&g, vb);
                    sink.buf(*b).add_t_matmul(va, &g);
                }
                Op::MatMulT(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    sink.buf(*a).add_matmul(&g, vb);
                    sink.buf(*b).add_t_matmul(&g, va);
                }
                Op::Add(a, b) => {
                    sink.buf(*a).add_assign(&g);
                    sink.buf(*b).add_assign(&g);
                }
                Op::Sub(a, b) => {
                    sink.buf(*a).add_assign(&g);
                    let buf = sink.buf(*b);
                    for (x, y) in buf.data.iter_mut().zip(&g.data) {
                        *x -= y;
                    }
                }
                Op::AddRow(a, bias) => {
                    sink.buf(*a).add_assign(&g);
                    let buf = sink.buf(*bias);
                    for r in 0..g.rows {
                        for (x, y) in buf.data.iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                }
                Op::AddConst(a) => sink.buf(*a).add_assign(&g),
                Op::Scale(a, s) => {
                    let buf = sink.buf(*a);
                    for (x, y) in buf.data.iter_mut().zip(&g.data) {
                        *x += s * y;
                    }
                }
                Op::MulConst(a, mask) => {
                    let buf = sink.buf(*a);
                    for ((x, y), m) in buf.data.iter_mut().zip(&g.data).zip(&mask.data) {
                        *x += y * m;
                    }
                }
                Op::Relu(a) => {
                    let out = node.value.as_ref().unwrap();
                    let buf = sink.buf(*a);
                    for ((x, y), o) in buf.data.iter_mut().zip(&g.data).zip(&out.data) {
                        if *o > 0.0 {
                            *x += y;
                        }
                    }
                }
                Op::Gather(table, indices) => {
                    let buf = sink.buf(*table);
                    for (r, &idx) in indices.iter().enumerate() {
                        for (x, y) in buf.row_mut(idx).iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                }
                Op::SelectRow(a, row) => {
                    for (x, y) in sink.buf(*a).row_mut(*row).iter_mut().zip(&g.data) {
                        *x += y;
                    }
                }
                Op::Stack(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.value(p).data.len();
                        for (x, y) in sink.buf(p).data.iter_mut().zip(&g.data[off..off + n]) {
                            *x += y;
                        }
                        off += n;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).cols;
                        let buf = sink.buf(p);
                        for r in 0..g.rows {
                            for (x, y) in buf.row_mut(r).iter_mut().zip(&g.row(r)[off..off + w]) {
                                *x += y;
                            }
                        }
                        off += w;
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gamma);
                    let (rows, cols) = xhat.shape();
                    {
                        let gbuf = sink.buf(*gamma);
                        for r in 0..rows {
                            for c in 0..cols {
                                gbuf.data[c] += g.data[r * cols + c] * xhat.data[r * cols + c];
                            }
                        }
                    }
                    {
                        let bbuf = sink.buf(*beta);
                        for r in 0..rows {
                            for c in 0..cols {
                                bbuf.data[c] += g.data[r * cols + c];
                            }
                        }
                    }
                    let xbuf = sink.buf(*x);
                    let n = cols as f64;
                    let mut dxhat = vec![0.0; cols];
                    for r in 0..rows {
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for c in 0..cols {
                            let d = g.data[r * cols + c] * gv.data[c];
                            dxhat[c] = d;
                            sum_d += d;
                            sum_dx += d * xhat.data[r * cols + c];
                        }
                        let inv = inv_std[r];
                        for c in 0..cols {
                            xbuf.data[r * cols + c] += inv / n
                                * (n * dxhat[c] - sum_d - xhat.data[r * cols + c] * sum_dx);
                        }
                    }
                }
                Op::Softmax(a) => {
                    let y = node.value.as_ref().unwrap();
                    let buf = sink.buf(*a);
                    for r in 0..y.rows {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let s: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for (c, x) in buf.row_mut(r).iter_mut().enumerate() {
                            *x += yr[c] * (gr[c] - s);
                        }
                    }
                }
                Op::SumSquares(a) => {
                    let va = self.value(*a);
                    let s = g.data[0];
                    for (x, v) in sink.buf(*a).data.iter_mut().zip(&va.data) {
                        *x += 2.0 * s * v;
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    skip,
                    probs,
                } => {
                    let s = g.data[0];
                    let buf = sink.buf(*logits);
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        for (x, p) in buf.row_mut(r).iter_mut().zip(probs.row(r)).skip(*skip) {
                            *x += s * p;
                        }
                        buf.data[r * probs.cols + t] -= s;
                    }
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        sink.buf(p).add_assign(&g);
                    }
                }
            }
        }
        sink.param_grads
    }
}

struct Sink<'g, 'p> {
    graph: &'g Graph<'p>,
    node_grads: Vec<Option<Mat>>,
    param_grads: Grads,
}

impl Sink<'_, '_> {
    /// Gradient accumulator for `node`: parameters write straight into the
    /// parameter buffers, everything else into per-node slots.
    fn buf(&mut self, node: NodeId) -> &mut Mat {
        let (rows, cols) = self.graph.value(node).shape();
        match self.graph.nodes[node.0].op {
            Op::Param(pid) => self.param_grads.slot_or_zeros(pid, rows, cols),
            _ => self.node_grads[node.0].get_or_insert_with(|| Mat::zeros(rows, cols)),
        }
    }
}

fn softmax_rows(v: &mut Mat) {
    for r in 0..v.rows {
        let row = v.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = if *x == f64::NEG_INFINITY {
                0.0
            } else {
                (*x - max).exp()
            };
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
}

/// Outcome of [`gradient_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Largest `|numeric - analytic| / max(|numeric|, |analytic|, 1e-5)`.
    pub max_rel_error: f64,
    /// Number of scalar parameters compared.
    pub checked: usize,
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central finite differences for every entry of the parameters in `ids`.
pub fn gradient_check(
    params: &mut ParamSet,
    ids: &[ParamId],
    eps: f64,
    f: impl Fn(&mut Graph) -> NodeId,
) -> GradCheck {
    let eval = |params: &ParamSet| {
        let mut g = Graph::new(params);
        let out = f(&mut g);
        g.scalar(out)
    };
    let grads = {
        let mut g = Graph::new(params);
        let out = f(&mut g);
        g.backward(out)
    };
    let mut worst = 0.0f64;
    let mut checked = 0;
    for &id in ids {
        for k in 0..params.get(id).data.len() {
            let orig = params.get(id).data[k];
            params.get_mut(id).data[k] = orig + eps;
            let plus = eval(params);
            params.get_mut(id).data[k] = orig - eps;
            let minus = eval(params);
            params.get_mut(id).data[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = grads.get(id).map_or(0.0, |m| m.data[k]);
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-5);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    GradCheck {
        max_rel_error: worst,
        checked,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central finite differences of `f` with respect to every scalar of
    /// every parameter, compared against the tape's gradients.
    fn check_grads(params: &mut ParamSet, f: impl Fn(&mut Graph) -> NodeId) {
        let grads = {
            let mut g = Graph::new(params);
            let out = f(&mut g);
            g.backward(out)
        };
        let eps = 1e-6;
        for id in params.ids().collect::<Vec<_>>() {
            let n = params.get(id).data.len();
            for k in 0..n {
                let orig = params.get(id).data[k];
                params.get_mut(id).data[k] = orig + eps;
                let plus = {
                    let mut g = Graph::new(params);
                    let out = f(&mut g);
                    g.scalar(out)
                };
                params.get_mut(id).data[k] = orig - eps;
                let minus = {
                    let mut g = Graph::new(params);
                    let out = f(&mut g);
                    g.scalar(out)
                };
                params.get_mut(id).data[k] = orig;
                let numeric = (plus - minus) / (2.0 * eps);
                let analytic = grads.get(id).map_or(0.0, |m| m.data[k]);
                let tol = 1e-5 * numeric.abs().max(analytic.abs()) + 1e-8;
                assert!(
                    (numeric - analytic).abs() < tol,
                    "{}[{k}]: numeric {numeric} analytic {analytic}",
                    params.name(id)
                );
            }
        }
    }

    #[test]
    fn attention_block_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut ps = ParamSet::new();
        let table = ps.add("table", Mat::randn(6, 4, 0.7, &mut rng));
        let wq = ps.add("wq", Mat::randn(4, 4, 0.5, &mut rng));
        let wk = ps.add("wk", Mat::randn(4, 4, 0.5, &mut rng));
        let gamma = ps.add("gamma", Mat::randn(1, 4, 0.3, &mut rng));
        let beta = ps.add("beta", Mat::randn(1, 4, 0.3, &mut rng));
        let bias = ps.add("bias", Mat::randn(1, 4, 0.3, &mut rng));
        let mask = Mat::from_vec(3, 4, (0..12).map(|i| if i % 5 == 0 { 0.0 } else { 1.25 }).collect());
        check_grads(&mut ps, |g| {
            let t = g.param(table);
            let x = g.gather(t, &[1, 3, 3]);
            let (pg, pb) = (g.param(gamma), g.param(beta));
            let x = g.layer_norm(x, pg, pb);
            let x = g.mul_const(x, mask.clone());
            let q = g.param(wq);
            let q = g.matmul(x, q);
            let k = g.param(wk);
            let k = g.matmul(x, k);
            let s = g.matmul_t(q, k);
            let s = g.scale(s, 0.5);
            let a = g.causal_softmax(s);
            let o = g.matmul(a, x);
            let b = g.param(bias);
            let o = g.add_row(o, b);
            let o = g.relu(o);
            let r = g.select_row(o, 2);
            let r0 = g.select_row(x, 0);
            let c = g.concat_cols(&[r, r0]);
            let st = g.stack(&[r, r0]);
            let sq = g.sum_squares(st);
            let logits = g.matmul_t(r, t);
            let ce = g.cross_entropy(logits, 4, 1);
            let all = g.matmul_t(o, t);
            let ce_rows = g.cross_entropy_rows(all, &[Some(2), None, Some(5)], 1);
            let c2 = g.sum_squares(c);
            let d = g.sub(r, r0);
            let d2 = g.sum_squares(d);
            g.sum(&[ce, ce_rows, sq, c2, d2])
        });
    }

    #[test]
    fn causal_softmax_masks_future() {
        let ps = ParamSet::new();
        let mut g = Graph::new(&ps);
        let s = g.constant(Mat::from_vec(2, 2, vec![1.0, 5.0, 1.0, 1.0]));
        let a = g.causal_softmax(s);
        assert_eq!(g.value(a).data, vec![1.0, 0.0, 0.5, 0.5]);
    }

    #[test]
    fn cross_entropy_uniform_is_ln_n() {
        let ps = ParamSet::new();
        let mut g = Graph::new(&ps);
        let l = g.constant(Mat::row_vector(vec![99.0, 2.0, 2.0]));
        let ce = g.cross_entropy(l, 1, 1);
        assert!((g.scalar(ce) - 2f64.ln()).abs() < 1e-15);
    }
}
