//! Tape-based reverse-mode differentiation over dense row-major matrices.
//!
//! Every value in a [`Graph`] is a 2-D matrix. Operations append a node
//! holding the forward value plus whatever the backward pass needs;
//! [`Graph::backward`] walks the tape in reverse and accumulates
//! gradients for every node that depends on a differentiable leaf.

use super::attention::{attention_backward, attention_forward, softmax_in_place, AttentionShape};
use super::scalar::{gemm, MatRef, Scalar};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

const LN_EPS: f64 = 1e-5;
const NORM_EPS: f64 = 1e-12;

enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    Add { a: Var, b: Var },
    AddRow { x: Var, bias: Var },
    AddTiled { x: Var, table: Var, period: usize },
    Scale { x: Var, s: T },
    Concat { a: Var, b: Var, axis: Axis },
    Relu { x: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, rstd: Vec<T> },
    Softmax { x: Var, axis: Axis },
    MaskedMean { x: Var, mask: Vec<bool>, seq: usize },
    L2Normalize { x: Var, norms: Vec<T> },
    Attention { qkv: Var, probs: Vec<T>, shape: AttentionShape },
    Gather { x: Var, idx: Vec<usize> },
    RowDot { a: Var, b: Var },
    RowDistance { a: Var, b: Var },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<T> },
    Mse { pred: Var, target: Vec<T> },
    Sum { x: Var },
}

struct Node<T> {
    value: Vec<T>,
    rows: usize,
    cols: usize,
    op: Op<T>,
    needs_grad: bool,
}

/// A single-threaded computation tape.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of `v`, or `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<T>, rows: usize, cols: usize, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            value,
            rows,
            cols,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A differentiable leaf (a parameter).
    pub fn param(&mut self, value: Vec<T>, rows: usize, cols: usize) -> Result<Var> {
        check_len("param", &value, rows, cols)?;
        Ok(self.push(value, rows, cols, Op::Leaf, true))
    }

    /// A constant leaf; no gradient flows into it.
    pub fn constant(&mut self, value: Vec<T>, rows: usize, cols: usize) -> Result<Var> {
        check_len("constant", &value, rows, cols)?;
        Ok(self.push(value, rows, cols, Op::Leaf, false))
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    fn shape_str(&self, vars: &[Var]) -> String {
        vars.iter()
            .map(|&v| {
                let (r, c) = self.shape(v);
                format!("[{r}x{c}]")
            })
            .collect::<Vec<_>>()
            .join(" vs ")
    }

    /// `a b` or, with `trans_b`, `a bᵀ`.
    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (br, bc) = self.shape(b);
        let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(Error::shape("matmul", self.shape_str(&[a, b])));
        }
        let mut out = vec![T::zero(); m * n];
        {
            let am = MatRef::row_major(self.value(a), m, k);
            let bm = MatRef::row_major(self.value(b), br, bc);
            let bm = if trans_b { bm.t() } else { bm };
            gemm(T::one(), am, bm, T::zero(), &mut out, 0, n);
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, m, n, Op::MatMul { a, b, trans_b }, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add", self.shape_str(&[a, b])));
        }
        let out: Vec<T> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let (r, c) = self.shape(a);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, r, c, Op::Add { a, b }, ng))
    }

    /// Adds a `1 x cols` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        if self.shape(bias) != (1, c) {
            return Err(Error::shape("add_row", self.shape_str(&[x, bias])));
        }
        let b = self.value(bias);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(c.max(1)) {
            for (o, &bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(out, r, c, Op::AddRow { x, bias }, ng))
    }

    /// Adds `table[r % period]` to row `r` of `x`.
    pub fn add_tiled(&mut self, x: Var, table: Var, period: usize) -> Result<Var> {
        let (r, c) = self.shape(x);
        let (tr, tc) = self.shape(table);
        if tc != c || tr < period || period == 0 {
            return Err(Error::shape("add_tiled", format!("{} period {period}", self.shape_str(&[x, table]))));
        }
        let t = self.value(table);
        let mut out = self.value(x).to_vec();
        for (i, row) in out.chunks_mut(c.max(1)).enumerate() {
            let p = (i % period) * c;
            for (o, &tv) in row.iter_mut().zip(&t[p..p + c]) {
                *o += tv;
            }
        }
        let ng = self.ng(x) || self.ng(table);
        Ok(self.push(out, r, c, Op::AddTiled { x, table, period }, ng))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let s = T::lit(s);
        let out = self.value(x).iter().map(|&v| v * s).collect();
        let (r, c) = self.shape(x);
        let ng = self.ng(x);
        self.push(out, r, c, Op::Scale { x, s }, ng)
    }

    pub fn concat(&mut self, a: Var, b: Var, axis: Axis) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        let (out, r, c) = match axis {
            Axis::Rows => {
                if ac != bc {
                    return Err(Error::shape("concat", self.shape_str(&[a, b])));
                }
                let mut out = self.value(a).to_vec();
                out.extend_from_slice(self.value(b));
                (out, ar + br, ac)
            }
            Axis::Cols => {
                if ar != br {
                    return Err(Error::shape("concat", self.shape_str(&[a, b])));
                }
                let mut out = Vec::with_capacity(ar * (ac + bc));
                let (av, bv) = (self.value(a), self.value(b));
                for i in 0..ar {
                    out.extend_from_slice(&av[i * ac..(i + 1) * ac]);
                    out.extend_from_slice(&bv[i * bc..(i + 1) * bc]);
                }
                (out, ar, ac + bc)
            }
        };
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, r, c, Op::Concat { a, b, axis }, ng))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self
            .value(x)
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let (r, c) = self.shape(x);
        let ng = self.ng(x);
        self.push(out, r, c, Op::Relu { x }, ng)
    }

    /// Row-wise layer normalization with affine `gamma`/`beta` (`1 x cols`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        if self.shape(gamma) != (1, c) || self.shape(beta) != (1, c) {
            return Err(Error::shape("layer_norm", self.shape_str(&[x, gamma, beta])));
        }
        let xv = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let n = T::lit(c as f64);
        let mut out = vec![T::zero(); r * c];
        let mut rstd = vec![T::zero(); r];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rs = T::one() / (var + T::lit(LN_EPS)).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                out[i * c + j] = (row[j] - mean) * rs * g[j] + b[j];
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(out, r, c, Op::LayerNorm { x, gamma, beta, rstd }, ng))
    }

    pub fn softmax(&mut self, x: Var, axis: Axis) -> Var {
        let (r, c) = self.shape(x);
        let mut out = self.value(x).to_vec();
        match axis {
            Axis::Cols => {
                for row in out.chunks_mut(c.max(1)) {
                    softmax_in_place(row);
                }
            }
            Axis::Rows => {
                let mut col = vec![T::zero(); r];
                for j in 0..c {
                    for i in 0..r {
                        col[i] = out[i * c + j];
                    }
                    softmax_in_place(&mut col);
                    for i in 0..r {
                        out[i * c + j] = col[i];
                    }
                }
            }
        }
        let ng = self.ng(x);
        self.push(out, r, c, Op::Softmax { x, axis }, ng)
    }

    /// Averages consecutive blocks of `seq` rows, skipping rows whose
    /// `mask` entry is `true` (padding). A block with no valid rows
    /// averages to zero.
    pub fn masked_mean(&mut self, x: Var, mask: &[bool], seq: usize) -> Result<Var> {
        let (r, c) = self.shape(x);
        if seq == 0 || r % seq != 0 || mask.len() != r {
            return Err(Error::shape(
                "masked_mean",
                format!("{} with mask {} seq {seq}", self.shape_str(&[x]), mask.len()),
            ));
        }
        let groups = r / seq;
        let xv = self.value(x);
        let mut out = vec![T::zero(); groups * c];
        for g in 0..groups {
            let valid = (0..seq).filter(|&s| !mask[g * seq + s]).count();
            if valid == 0 {
                continue;
            }
            let inv = T::one() / T::lit(valid as f64);
            let o = &mut out[g * c..(g + 1) * c];
            for s in 0..seq {
                let row = g * seq + s;
                if mask[row] {
                    continue;
                }
                for (ov, &xv) in o.iter_mut().zip(&xv[row * c..(row + 1) * c]) {
                    *ov += xv;
                }
            }
            for ov in o.iter_mut() {
                *ov *= inv;
            }
        }
        let ng = self.ng(x);
        Ok(self.push(
            out,
            groups,
            c,
            Op::MaskedMean {
                x,
                mask: mask.to_vec(),
                seq,
            },
            ng,
        ))
    }

    /// Scales every row to unit Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let mut out = self.value(x).to_vec();
        let mut norms = vec![T::zero(); r];
        for (i, row) in out.chunks_mut(c.max(1)).enumerate() {
            let n = row.iter().map(|&v| v * v).sum::<T>().sqrt().max(T::lit(NORM_EPS));
            norms[i] = n;
            for v in row.iter_mut() {
                *v = *v / n;
            }
        }
        let ng = self.ng(x);
        self.push(out, r, c, Op::L2Normalize { x, norms }, ng)
    }

    /// Multi-head scaled dot-product attention over a packed
    /// `[groups*seq, 3*dim]` query/key/value matrix.
    pub fn attention(
        &mut self,
        qkv: Var,
        key_pad: &[bool],
        groups: usize,
        seq: usize,
        heads: usize,
    ) -> Result<Var> {
        let (r, c) = self.shape(qkv);
        if c % 3 != 0 || heads == 0 || (c / 3) % heads != 0 || r != groups * seq || key_pad.len() != r {
            return Err(Error::shape(
                "attention",
                format!(
                    "{} groups {groups} seq {seq} heads {heads} mask {}",
                    self.shape_str(&[qkv]),
                    key_pad.len()
                ),
            ));
        }
        let shape = AttentionShape {
            groups,
            seq,
            heads,
            dim: c / 3,
        };
        let (out, probs) = attention_forward(self.value(qkv), key_pad, shape);
        let ng = self.ng(qkv);
        Ok(self.push(out, r, c / 3, Op::Attention { qkv, probs, shape }, ng))
    }

    /// Selects rows by index (repetition allowed).
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::shape("gather", format!("index {bad} out of {r} rows")));
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&xv[i * c..(i + 1) * c]);
        }
        let ng = self.ng(x);
        Ok(self.push(
            out,
            idx.len(),
            c,
            Op::Gather {
                x,
                idx: idx.to_vec(),
            },
            ng,
        ))
    }

    /// Row-wise inner products, `[rows x 1]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("row_dot", self.shape_str(&[a, b])));
        }
        let (r, c) = self.shape(a);
        let (av, bv) = (self.value(a), self.value(b));
        let out = (0..r)
            .map(|i| {
                av[i * c..(i + 1) * c]
                    .iter()
                    .zip(&bv[i * c..(i + 1) * c])
                    .map(|(&x, &y)| x * y)
                    .sum()
            })
            .collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, r, 1, Op::RowDot { a, b }, ng))
    }

    /// Row-wise Euclidean distances, `[rows x 1]`.
    pub fn row_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("row_distance", self.shape_str(&[a, b])));
        }
        let (r, c) = self.shape(a);
        let (av, bv) = (self.value(a), self.value(b));
        let out = (0..r)
            .map(|i| {
                let s: T = av[i * c..(i + 1) * c]
                    .iter()
                    .zip(&bv[i * c..(i + 1) * c])
                    .map(|(&x, &y)| (x - y) * (x - y))
                    .sum();
                (s + T::lit(NORM_EPS)).sqrt()
            })
            .collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, r, 1, Op::RowDistance { a, b }, ng))
    }

    /// Mean softmax cross-entropy of each row against its target column.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(logits);
        if targets.len() != r || targets.iter().any(|&t| t >= c) || r == 0 {
            return Err(Error::shape(
                "cross_entropy",
                format!("{} with {} targets", self.shape_str(&[logits]), targets.len()),
            ));
        }
        let mut probs = self.value(logits).to_vec();
        let mut loss = T::zero();
        for (i, row) in probs.chunks_mut(c).enumerate() {
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            loss += lse - row[targets[i]];
            softmax_in_place(row);
        }
        let loss = loss / T::lit(r as f64);
        let ng = self.ng(logits);
        Ok(self.push(
            vec![loss],
            1,
            1,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            ng,
        ))
    }

    /// Mean squared error of a column of predictions against fixed targets.
    pub fn mse(&mut self, pred: Var, target: &[T]) -> Result<Var> {
        let (r, c) = self.shape(pred);
        if r * c != target.len() || target.is_empty() {
            return Err(Error::shape("mse", format!("{} vs {} targets", self.shape_str(&[pred]), target.len())));
        }
        let loss = self
            .value(pred)
            .iter()
            .zip(target)
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum::<T>()
            / T::lit(target.len() as f64);
        let ng = self.ng(pred);
        Ok(self.push(
            vec![loss],
            1,
            1,
            Op::Mse {
                pred,
                target: target.to_vec(),
            },
            ng,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum();
        let ng = self.ng(x);
        self.push(vec![s], 1, 1, Op::Sum { x }, ng)
    }

    /// Reverse pass from a `1 x 1` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::shape("backward", self.shape_str(&[loss])));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let Some(gout) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            self.backprop_node(node, &gout, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(gout);
            }
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node<T>, gout: &[T], grads: &mut [Option<Vec<T>>]) {
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let (m, k) = self.shape(*a);
                let (br, bc) = self.shape(*b);
                let n = cols;
                let g = MatRef::row_major(gout, m, n);
                if self.ng(*a) {
                    let bm = MatRef::row_major(self.value(*b), br, bc);
                    // dA = G Bᵀ (or G B when b was transposed)
                    let bt = if *trans_b { bm } else { bm.t() };
                    let ga = grad_buf(grads, *a, m * k);
                    gemm(T::one(), g, bt, T::one(), ga, 0, k);
                }
                if self.ng(*b) {
                    let am = MatRef::row_major(self.value(*a), m, k);
                    let gb = grad_buf(grads, *b, br * bc);
                    if *trans_b {
                        // dB = Gᵀ A, shape [n x k]
                        gemm(T::one(), g.t(), am, T::one(), gb, 0, k);
                    } else {
                        gemm(T::one(), am.t(), g, T::one(), gb, 0, n);
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if self.ng(v) {
                        accumulate(grad_buf(grads, v, gout.len()), gout);
                    }
                }
            }
            Op::AddRow { x, bias } => {
                if self.ng(*x) {
                    accumulate(grad_buf(grads, *x, gout.len()), gout);
                }
                if self.ng(*bias) {
                    let gb = grad_buf(grads, *bias, cols);
                    for row in gout.chunks(cols.max(1)) {
                        accumulate(gb, row);
                    }
                }
            }
            Op::AddTiled { x, table, period } => {
                if self.ng(*x) {
                    accumulate(grad_buf(grads, *x, gout.len()), gout);
                }
                if self.ng(*table) {
                    let (tr, tc) = self.shape(*table);
                    let gt = grad_buf(grads, *table, tr * tc);
                    for (i, row) in gout.chunks(cols.max(1)).enumerate() {
                        let p = (i % period) * cols;
                        accumulate(&mut gt[p..p + cols], row);
                    }
                }
            }
            Op::Scale { x, s } => {
                if self.ng(*x) {
                    let gx = grad_buf(grads, *x, gout.len());
                    for (d, &g) in gx.iter_mut().zip(gout) {
                        *d += g * *s;
                    }
                }
            }
            Op::Concat { a, b, axis } => {
                let (ar, ac) = self.shape(*a);
                let (br, bc) = self.shape(*b);
                match axis {
                    Axis::Rows => {
                        if self.ng(*a) {
                            accumulate(grad_buf(grads, *a, ar * ac), &gout[..ar * ac]);
                        }
                        if self.ng(*b) {
                            accumulate(grad_buf(grads, *b, br * bc), &gout[ar * ac..]);
                        }
                    }
                    Axis::Cols => {
                        if self.ng(*a) {
                            let ga = grad_buf(grads, *a, ar * ac);
                            for i in 0..rows {
                                accumulate(&mut ga[i * ac..(i + 1) * ac], &gout[i * cols..i * cols + ac]);
                            }
                        }
                        if self.ng(*b) {
                            let gb = grad_buf(grads, *b, br * bc);
                            for i in 0..rows {
                                accumulate(&mut gb[i * bc..(i + 1) * bc], &gout[i * cols + ac..(i + 1) * cols]);
                            }
                        }
                    }
                }
            }
            Op::Relu { x } => {
                if self.ng(*x) {
                    let xv = self.value(*x);
                    let gx = grad_buf(grads, *x, gout.len());
                    for ((d, &g), &v) in gx.iter_mut().zip(gout).zip(xv) {
                        if v > T::zero() {
                            *d += g;
                        }
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, rstd } => {
                let xv = self.value(*x);
                let gv = self.value(*gamma);
                let n = T::lit(cols as f64);
                let mut xhat = vec![T::zero(); cols];
                let mut dxhat = vec![T::zero(); cols];
                let mut dgamma = vec![T::zero(); cols];
                let mut dbeta = vec![T::zero(); cols];
                let need_x = self.ng(*x);
                for i in 0..rows {
                    let row = &xv[i * cols..(i + 1) * cols];
                    let mean = row.iter().copied().sum::<T>() / n;
                    let grow = &gout[i * cols..(i + 1) * cols];
                    for j in 0..cols {
                        xhat[j] = (row[j] - mean) * rstd[i];
                        dxhat[j] = grow[j] * gv[j];
                        dgamma[j] += grow[j] * xhat[j];
                        dbeta[j] += grow[j];
                    }
                    if need_x {
                        let m1 = dxhat.iter().copied().sum::<T>() / n;
                        let m2 = dxhat.iter().zip(&xhat).map(|(&a, &b)| a * b).sum::<T>() / n;
                        let gx = grad_buf(grads, *x, rows * cols);
                        for j in 0..cols {
                            gx[i * cols + j] += rstd[i] * (dxhat[j] - m1 - xhat[j] * m2);
                        }
                    }
                }
                if self.ng(*gamma) {
                    accumulate(grad_buf(grads, *gamma, cols), &dgamma);
                }
                if self.ng(*beta) {
                    accumulate(grad_buf(grads, *beta, cols), &dbeta);
                }
            }
            Op::Softmax { x, axis } => {
                if self.ng(*x) {
                    let y = &node.value;
                    let gx = grad_buf(grads, *x, rows * cols);
                    match axis {
                        Axis::Cols => {
                            for i in 0..rows {
                                let yr = &y[i * cols..(i + 1) * cols];
                                let gr = &gout[i * cols..(i + 1) * cols];
                                let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                                for j in 0..cols {
                                    gx[i * cols + j] += yr[j] * (gr[j] - dot);
                                }
                            }
                        }
                        Axis::Rows => {
                            for j in 0..cols {
                                let dot: T = (0..rows).map(|i| y[i * cols + j] * gout[i * cols + j]).sum();
                                for i in 0..rows {
                                    gx[i * cols + j] += y[i * cols + j] * (gout[i * cols + j] - dot);
                                }
                            }
                        }
                    }
                }
            }
            Op::MaskedMean { x, mask, seq } => {
                if self.ng(*x) {
                    let (xr, _) = self.shape(*x);
                    let gx = grad_buf(grads, *x, xr * cols);
                    for g in 0..rows {
                        let valid = (0..*seq).filter(|&s| !mask[g * seq + s]).count();
                        if valid == 0 {
                            continue;
                        }
                        let inv = T::one() / T::lit(valid as f64);
                        let grow = &gout[g * cols..(g + 1) * cols];
                        for s in 0..*seq {
                            let r = g * seq + s;
                            if mask[r] {
                                continue;
                            }
                            for (d, &gv) in gx[r * cols..(r + 1) * cols].iter_mut().zip(grow) {
                                *d += gv * inv;
                            }
                        }
                    }
                }
            }
            Op::L2Normalize { x, norms } => {
                if self.ng(*x) {
                    let y = &node.value;
                    let gx = grad_buf(grads, *x, rows * cols);
                    for i in 0..rows {
                        let yr = &y[i * cols..(i + 1) * cols];
                        let gr = &gout[i * cols..(i + 1) * cols];
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for j in 0..cols {
                            gx[i * cols + j] += (gr[j] - yr[j] * dot) / norms[i];
                        }
                    }
                }
            }
            Op::Attention { qkv, probs, shape } => {
                if self.ng(*qkv) {
                    let (qr, qc) = self.shape(*qkv);
                    let qv = self.value(*qkv);
                    let gq = grad_buf(grads, *qkv, qr * qc);
                    attention_backward(qv, probs, gout, *shape, gq);
                }
            }
            Op::Gather { x, idx } => {
                if self.ng(*x) {
                    let (xr, _) = self.shape(*x);
                    let gx = grad_buf(grads, *x, xr * cols);
                    for (o, &i) in idx.iter().enumerate() {
                        accumulate(&mut gx[i * cols..(i + 1) * cols], &gout[o * cols..(o + 1) * cols]);
                    }
                }
            }
            Op::RowDot { a, b } => {
                let (_, c) = self.shape(*a);
                for (target, other) in [(*a, *b), (*b, *a)] {
                    if self.ng(target) {
                        let ov = self.value(other);
                        let gt = grad_buf(grads, target, rows * c);
                        for i in 0..rows {
                            for j in 0..c {
                                gt[i * c + j] += gout[i] * ov[i * c + j];
                            }
                        }
                    }
                }
            }
            Op::RowDistance { a, b } => {
                let (_, c) = self.shape(*a);
                let (av, bv) = (self.value(*a), self.value(*b));
                let d = &node.value;
                for (target, sign) in [(*a, T::one()), (*b, -T::one())] {
                    if self.ng(target) {
                        let gt = grad_buf(grads, target, rows * c);
                        for i in 0..rows {
                            let f = gout[i] / d[i] * sign;
                            for j in 0..c {
                                gt[i * c + j] += f * (av[i * c + j] - bv[i * c + j]);
                            }
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                if self.ng(*logits) {
                    let (r, c) = self.shape(*logits);
                    let scale = gout[0] / T::lit(r as f64);
                    let gl = grad_buf(grads, *logits, r * c);
                    for i in 0..r {
                        for j in 0..c {
                            let onehot = if j == targets[i] { T::one() } else { T::zero() };
                            gl[i * c + j] += scale * (probs[i * c + j] - onehot);
                        }
                    }
                }
            }
            Op::Mse { pred, target } => {
                if self.ng(*pred) {
                    let pv = self.value(*pred);
                    let scale = gout[0] * T::lit(2.0 / target.len() as f64);
                    let gp = grad_buf(grads, *pred, pv.len());
                    for ((d, &p), &t) in gp.iter_mut().zip(pv).zip(target) {
                        *d += scale * (p - t);
                    }
                }
            }
            Op::Sum { x } => {
                if self.ng(*x) {
                    let n = self.value(*x).len();
                    let gx = grad_buf(grads, *x, n);
                    for d in gx.iter_mut() {
                        *d += gout[0];
                    }
                }
            }
        }
    }
}

fn check_len<T>(op: &'static str, value: &[T], rows: usize, cols: usize) -> Result<()> {
    if value.len() != rows * cols {
        return Err(Error::shape(op, format!("{} values for [{rows}x{cols}]", value.len())));
    }
    Ok(())
}

fn grad_buf<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn accumulate<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
