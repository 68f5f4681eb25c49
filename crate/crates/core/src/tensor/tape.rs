use std::sync::Arc;

use super::gemm::gemm;
use super::ops::{gelu_grad_scalar, gelu_scalar, layernorm_rows, softmax_strided};
use super::Tensor;
use crate::attention::{attend, attend_backward, KeySets};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberate corruption of a backward rule, used as a negative control for
/// gradient checking.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Fault {
    /// Multiply the GELU derivative by this factor.
    GeluGradScale(f64),
}

enum Op {
    Leaf,
    /// `a · op(b)` with `a: m × k`; `op(b)` is `b` or `bᵀ`.
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
        b_transposed: bool,
    },
    Add(Var, Var),
    Mul(Var, Var),
    /// Adds a length-`cols` vector to every row.
    AddRow {
        a: Var,
        row: Var,
    },
    Scale(Var, f64),
    Sum(Var),
    MeanRows(Var),
    Softmax {
        a: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    GatherRows {
        a: Var,
        rows: Vec<usize>,
    },
    ScatterAddRows {
        base: Var,
        delta: Var,
        rows: Vec<usize>,
    },
    SliceCols {
        a: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    /// Entries where `keep` is false become `-inf`.
    MaskFill {
        a: Var,
        keep: Arc<Vec<bool>>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        keys: Arc<KeySets>,
        probs: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Reshape(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Append-only record of a computation. Nodes are stored in creation order,
/// which is a topological order of the graph.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    attention_macs: u64,
    fault: Option<Fault>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fault(fault: Fault) -> Self {
        Self {
            fault: Some(fault),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-adds spent in attention score and weighted-sum loops so far.
    pub fn attention_macs(&self) -> u64 {
        self.attention_macs
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Leaf that receives gradients.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that does not receive gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf, if `backward` reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn matrix_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(Error::dim(op, format!("expected a matrix, got shape {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ`, the shape of a linear layer with `[out × in]` weights.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, b_transposed: bool) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (br, bc) = self.matrix_dims("matmul", b)?;
        let (kb, n) = if b_transposed { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(Error::dim(
                "matmul",
                format!(
                    "{:?} x {:?}{}",
                    self.shape(a),
                    self.shape(b),
                    if b_transposed { "ᵀ" } else { "" }
                ),
            ));
        }
        let mut out = Tensor::zeros([m, n]);
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            b_transposed,
            out.data_mut(),
            false,
        );
        let rg = self.rg(&[a, b]);
        Ok(self.push(
            out,
            Op::MatMul {
                a,
                b,
                m,
                k,
                n,
                b_transposed,
            },
            rg,
        ))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Broadcast-add a vector over the rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let cols = self.value(a).cols();
        if self.value(row).len() != cols {
            return Err(Error::dim(
                "add_row",
                format!("row {:?} does not fit {:?}", self.shape(row), self.shape(a)),
            ));
        }
        let r = self.value(row).data().to_vec();
        let mut out = self.value(a).clone();
        for chunk in out.data_mut().chunks_mut(cols) {
            for (o, b) in chunk.iter_mut().zip(&r) {
                *o += b;
            }
        }
        let rg = self.rg(&[a, row]);
        Ok(self.push(out, Op::AddRow { a, row }, rg))
    }

    /// `x · Wᵀ + b` with `W: [out × in]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let y = self.matmul_nt(x, weight)?;
        match bias {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= s);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(out, Op::Sum(a), rg)
    }

    /// Column means of a matrix, as a `1 × cols` matrix.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims("mean_rows", a)?;
        let mut out = Tensor::zeros([1, c]);
        let src = self.value(a).data();
        let mut acc = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                acc[j] += src[i * c + j];
            }
        }
        for (o, v) in out.data_mut().iter_mut().zip(acc) {
            *o = v / r as f64;
        }
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::MeanRows(a), rg))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(
                "softmax",
                format!("axis {axis} out of range for shape {shape:?}"),
            ));
        }
        let outer = shape[..axis].iter().product();
        let len = shape[axis];
        let inner = shape[axis + 1..].iter().product();
        let mut out = Tensor::zeros(shape);
        softmax_strided(self.value(a).data(), out.data_mut(), outer, len, inner);
        let rg = self.rg(&[a]);
        Ok(self.push(
            out,
            Op::Softmax {
                a,
                outer,
                len,
                inner,
            },
            rg,
        ))
    }

    /// Layer normalization over the last dimension.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let d = self.value(x).cols();
        if self.value(gamma).len() != d || self.value(beta).len() != d {
            return Err(Error::dim(
                "layernorm",
                format!(
                    "input width {d}, gamma {:?}, beta {:?}",
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        let (out, xhat, rstd) = layernorm_rows(
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
        );
        let out = Tensor::new(self.shape(x).to_vec(), out)?;
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| *v = gelu_scalar(*v));
        let rg = self.rg(&[a]);
        self.push(out, Op::Gelu(a), rg)
    }

    /// Rows of `a` in the given order (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, rows: Vec<usize>) -> Result<Var> {
        let (r, c) = self.matrix_dims("gather_rows", a)?;
        if rows.is_empty() {
            return Err(Error::dim("gather_rows", "empty row selection"));
        }
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::dim(
                "gather_rows",
                format!("row {bad} out of range for {r} rows"),
            ));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &i in &rows {
            data.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let out = Tensor::new([rows.len(), c], data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::GatherRows { a, rows }, rg))
    }

    /// `base` with row `i` of `delta` added into row `rows[i]`.
    pub fn scatter_add_rows(&mut self, base: Var, delta: Var, rows: Vec<usize>) -> Result<Var> {
        let (r, c) = self.matrix_dims("scatter_add_rows", base)?;
        let (dr, dc) = self.matrix_dims("scatter_add_rows", delta)?;
        if dc != c || dr != rows.len() || rows.iter().any(|&i| i >= r) {
            return Err(Error::dim(
                "scatter_add_rows",
                format!(
                    "delta {:?} into base {:?} at {} rows",
                    self.shape(delta),
                    self.shape(base),
                    rows.len()
                ),
            ));
        }
        let mut out = self.value(base).clone();
        let d = self.value(delta).data();
        for (i, &row) in rows.iter().enumerate() {
            for j in 0..c {
                out.data_mut()[row * c + j] += d[i * c + j];
            }
        }
        let rg = self.rg(&[base, delta]);
        Ok(self.push(out, Op::ScatterAddRows { base, delta, rows }, rg))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.matrix_dims("slice_cols", a)?;
        if start >= end || end > c {
            return Err(Error::dim(
                "slice_cols",
                format!("columns {start}..{end} of {c}"),
            ));
        }
        let w = end - start;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(r * w);
        for i in 0..r {
            data.extend_from_slice(&src[i * c + start..i * c + end]);
        }
        let out = Tensor::new([r, w], data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::SliceCols { a, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let mut rows = None;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.matrix_dims("concat_cols", p)?;
            if *rows.get_or_insert(r) != r {
                return Err(Error::dim("concat_cols", "row counts differ"));
            }
            total += c;
        }
        let rows = rows.ok_or_else(|| Error::dim("concat_cols", "nothing to concatenate"))?;
        let mut out = Tensor::zeros([rows, total]);
        let mut offset = 0;
        for &p in parts {
            let v = self.value(p);
            let c = v.cols();
            for i in 0..rows {
                out.data_mut()[i * total + offset..i * total + offset + c]
                    .copy_from_slice(v.row(i));
            }
            offset += c;
        }
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let mut cols = None;
        let mut data = Vec::new();
        for &p in parts {
            let (_, c) = self.matrix_dims("concat_rows", p)?;
            if *cols.get_or_insert(c) != c {
                return Err(Error::dim("concat_rows", "column counts differ"));
            }
            data.extend_from_slice(self.value(p).data());
        }
        let cols = cols.ok_or_else(|| Error::dim("concat_rows", "nothing to concatenate"))?;
        let out = Tensor::new([data.len() / cols, cols], data)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Replace entries whose `keep` flag is false with `-inf`.
    pub fn mask_fill(&mut self, a: Var, keep: Arc<Vec<bool>>) -> Result<Var> {
        if keep.len() != self.value(a).len() {
            return Err(Error::dim(
                "mask_fill",
                format!("mask of {} for {:?}", keep.len(), self.shape(a)),
            ));
        }
        let mut out = self.value(a).clone();
        for (v, &k) in out.data_mut().iter_mut().zip(keep.iter()) {
            if !k {
                *v = f64::NEG_INFINITY;
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::MaskFill { a, keep }, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// Multi-head attention over gathered key sets. `q`, `k`, `v` are
    /// `tokens × D`; the result has one row per query listed in `keys`, heads
    /// concatenated along the columns.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        keys: Arc<KeySets>,
    ) -> Result<Var> {
        let mut macs = 0;
        let (out, probs) = attend(
            self.value(q),
            self.value(k),
            self.value(v),
            heads,
            &keys,
            &mut macs,
        )?;
        self.attention_macs += macs;
        let rg = self.rg(&[q, k, v]);
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                keys,
                probs,
            },
            rg,
        ))
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of
    /// `logits: [B × C]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (b, c) = self.matrix_dims("cross_entropy", logits)?;
        if labels.len() != b {
            return Err(Error::dim(
                "cross_entropy",
                format!("{} labels for {b} rows", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Data(format!("label {bad} outside 0..{c}")));
        }
        let x = self.value(logits).data();
        let mut probs = vec![0.0; b * c];
        let mut loss = 0.0;
        for i in 0..b {
            let row = &x[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[labels[i]];
            for j in 0..c {
                probs[i * c + j] = (row[j] - lse).exp();
            }
        }
        let out = Tensor::scalar(loss / b as f64);
        let rg = self.rg(&[logits]);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`. Gradients are added to whatever
    /// the leaves already hold.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(g),
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.0].value.data();

        match &nodes[i].op {
            Op::Leaf => unreachable!("leaves are handled by backward"),
            Op::MatMul {
                a,
                b,
                m,
                k,
                n,
                b_transposed,
            } => {
                let (m, k, n) = (*m, *k, *n);
                if let Some(ga) = slot(nodes, grads, *a) {
                    // dA = dC · op(B)ᵀ
                    gemm(m, n, k, g, false, val(*b), !*b_transposed, ga, true);
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    if *b_transposed {
                        // B is n × k: dB = dCᵀ · A
                        gemm(n, m, k, g, true, val(*a), false, gb, true);
                    } else {
                        // dB = Aᵀ · dC
                        gemm(k, m, n, val(*a), true, g, false, gb, true);
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gv) = slot(nodes, grads, v) {
                        gv.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Mul(a, b) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    for ((x, y), bv) in ga.iter_mut().zip(g).zip(val(*b)) {
                        *x += y * bv;
                    }
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    for ((x, y), av) in gb.iter_mut().zip(g).zip(val(*a)) {
                        *x += y * av;
                    }
                }
            }
            Op::AddRow { a, row } => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gr) = slot(nodes, grads, *row) {
                    let c = gr.len();
                    for chunk in g.chunks(c) {
                        gr.iter_mut().zip(chunk).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y * s);
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::MeanRows(a) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    let c = g.len();
                    let r = ga.len() / c;
                    let inv = 1.0 / r as f64;
                    for chunk in ga.chunks_mut(c) {
                        chunk.iter_mut().zip(g).for_each(|(x, y)| *x += y * inv);
                    }
                }
            }
            Op::Softmax {
                a,
                outer,
                len,
                inner,
            } => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    let y = nodes[i].value.data();
                    for o in 0..*outer {
                        for t in 0..*inner {
                            let base = o * len * inner + t;
                            let dot: f64 = (0..*len)
                                .map(|j| y[base + j * inner] * g[base + j * inner])
                                .sum();
                            for j in 0..*len {
                                let idx = base + j * inner;
                                ga[idx] += y[idx] * (g[idx] - dot);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gam = val(*gamma);
                let d = gam.len();
                if let Some(gx) = slot(nodes, grads, *x) {
                    for (r, &inv) in rstd.iter().enumerate() {
                        let span = r * d..(r + 1) * d;
                        let gr = &g[span.clone()];
                        let xh = &xhat[span.clone()];
                        let mut sum_dxh = 0.0;
                        let mut sum_dxh_xh = 0.0;
                        for j in 0..d {
                            let dxh = gr[j] * gam[j];
                            sum_dxh += dxh;
                            sum_dxh_xh += dxh * xh[j];
                        }
                        let out = &mut gx[span];
                        for j in 0..d {
                            let dxh = gr[j] * gam[j];
                            out[j] += inv / d as f64
                                * (d as f64 * dxh - sum_dxh - xh[j] * sum_dxh_xh);
                        }
                    }
                }
                if let Some(gg) = slot(nodes, grads, *gamma) {
                    for (r, _) in rstd.iter().enumerate() {
                        for j in 0..d {
                            gg[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                }
                if let Some(gb) = slot(nodes, grads, *beta) {
                    for chunk in g.chunks(d) {
                        gb.iter_mut().zip(chunk).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Gelu(a) => {
                let factor = match self.fault {
                    Some(Fault::GeluGradScale(s)) => s,
                    None => 1.0,
                };
                if let Some(ga) = slot(nodes, grads, *a) {
                    for ((x, y), xv) in ga.iter_mut().zip(g).zip(val(*a)) {
                        *x += y * gelu_grad_scalar(*xv) * factor;
                    }
                }
            }
            Op::GatherRows { a, rows } => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    let c = nodes[i].value.cols();
                    for (k, &r) in rows.iter().enumerate() {
                        for j in 0..c {
                            ga[r * c + j] += g[k * c + j];
                        }
                    }
                }
            }
            Op::ScatterAddRows { base, delta, rows } => {
                let c = nodes[i].value.cols();
                if let Some(gb) = slot(nodes, grads, *base) {
                    gb.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gd) = slot(nodes, grads, *delta) {
                    for (k, &r) in rows.iter().enumerate() {
                        for j in 0..c {
                            gd[k * c + j] += g[r * c + j];
                        }
                    }
                }
            }
            Op::SliceCols { a, start } => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    let w = nodes[i].value.cols();
                    let c = nodes[a.0].value.cols();
                    for (r, chunk) in g.chunks(w).enumerate() {
                        for (j, y) in chunk.iter().enumerate() {
                            ga[r * c + start + j] += y;
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = nodes[i].value.cols();
                let mut offset = 0;
                for &p in parts {
                    let c = nodes[p.0].value.cols();
                    if let Some(gp) = slot(nodes, grads, p) {
                        for (r, chunk) in gp.chunks_mut(c).enumerate() {
                            for (j, x) in chunk.iter_mut().enumerate() {
                                *x += g[r * total + offset + j];
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = nodes[p.0].value.len();
                    if let Some(gp) = slot(nodes, grads, p) {
                        gp.iter_mut()
                            .zip(&g[offset..offset + len])
                            .for_each(|(x, y)| *x += y);
                    }
                    offset += len;
                }
            }
            Op::MaskFill { a, keep } => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    for ((x, y), &k) in ga.iter_mut().zip(g).zip(keep.iter()) {
                        if k {
                            *x += y;
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                keys,
                probs,
            } => {
                let (q, k, v) = (*q, *k, *v);
                let mut dq = vec![0.0; nodes[q.0].value.len()];
                let mut dk = vec![0.0; nodes[k.0].value.len()];
                let mut dv = vec![0.0; nodes[v.0].value.len()];
                attend_backward(
                    &nodes[q.0].value,
                    &nodes[k.0].value,
                    &nodes[v.0].value,
                    *heads,
                    keys,
                    probs,
                    g,
                    &mut dq,
                    &mut dk,
                    &mut dv,
                );
                for (var, d) in [(q, dq), (k, dk), (v, dv)] {
                    if let Some(gv) = slot(nodes, grads, var) {
                        gv.iter_mut().zip(&d).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                if let Some(gl) = slot(nodes, grads, *logits) {
                    let b = labels.len();
                    let c = probs.len() / b;
                    let scale = g[0] / b as f64;
                    for (r, &label) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == label { 1.0 } else { 0.0 };
                            gl[r * c + j] += scale * (probs[r * c + j] - onehot);
                        }
                    }
                }
            }
        }
    }
}

/// Gradient buffer of `v`, allocated on first use; `None` for constants.
fn slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    let n = &nodes[v.0];
    if !n.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n.value.len()]))
}
