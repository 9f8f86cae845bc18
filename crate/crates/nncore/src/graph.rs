use crate::error::{shape_err, NnError, Result};
use crate::param::{ParamId, ParamStore};
use crate::rng::RngStream;
use crate::tensor::{matmul, matmul_nt, matmul_tn, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    MatMulT(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulCol(NodeId, NodeId),
    Affine(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    ConcatCols(Vec<NodeId>),
    SliceCols(NodeId, usize),
    ConcatRows(Vec<NodeId>),
    GatherRows(NodeId, Vec<usize>),
    Embedding(NodeId, Vec<usize>),
    Softmax(NodeId),
    CrossEntropy(NodeId, Vec<Option<usize>>),
    Mse(NodeId, Tensor),
    Mask(NodeId, Vec<f64>),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        normed: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Sum(NodeId),
}

struct Node {
    op: Op,
    value: Option<Tensor>,
}

/// Per-parameter gradients, aligned with a [`ParamStore`]. Parameters that
/// did not take part in the loss have no entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn empty(store: &ParamStore) -> Self {
        Self {
            grads: vec![None; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.index()).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.iter().all(Option::is_none)
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (slot, g) in self.grads.iter_mut().zip(&other.grads) {
            let Some(g) = g else { continue };
            match slot {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                None => *slot = Some(g.clone()),
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }

    pub fn max_abs_diff(&self, other: &Gradients) -> f64 {
        let mut worst: f64 = 0.0;
        for (a, b) in self.grads.iter().zip(&other.grads) {
            match (a, b) {
                (Some(a), Some(b)) => {
                    for (x, y) in a.data().iter().zip(b.data()) {
                        worst = worst.max((x - y).abs());
                    }
                }
                (Some(t), None) | (None, Some(t)) => {
                    for x in t.data() {
                        worst = worst.max(x.abs());
                    }
                }
                (None, None) => {}
            }
        }
        worst
    }
}

/// Records a forward computation over parameters borrowed from a
/// [`ParamStore`] and differentiates it in reverse.
pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
    training: bool,
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore, training: bool) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_nodes: vec![None; store.len()],
            training,
        }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        let node = &self.nodes[id.0];
        match (&node.op, &node.value) {
            (Op::Param(p), _) => self.store.value(*p),
            (_, Some(v)) => v,
            _ => unreachable!("non-parameter node without value"),
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        NodeId(self.nodes.len() - 1)
    }

    fn dims(&self, id: NodeId) -> (usize, usize) {
        self.value(id).dims()
    }

    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Input, value)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes[id.index()] {
            return n;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        let n = NodeId(self.nodes.len() - 1);
        self.param_nodes[id.index()] = Some(n);
        n
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(shape_err("matmul", format!("[{m}x{k}] · [{k2}x{n}]")));
        }
        let out = matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Op::MatMul(a, b), Tensor::matrix(m, n, out)))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        if k != k2 {
            return Err(shape_err("matmul_t", format!("[{m}x{k}] · [{n}x{k2}]ᵀ")));
        }
        let out = matmul_nt(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Op::MatMulT(a, b), Tensor::matrix(m, n, out)))
    }

    fn same_dims(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(usize, usize)> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            return Err(shape_err(op, format!("{da:?} vs {db:?}")));
        }
        Ok(da)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, n) = self.same_dims("add", a, b)?;
        let out = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        Ok(self.push(Op::Add(a, b), Tensor::matrix(m, n, out)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, n) = self.same_dims("mul", a, b)?;
        let out = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        Ok(self.push(Op::Mul(a, b), Tensor::matrix(m, n, out)))
    }

    /// Adds a `[1×n]` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (m, n) = self.dims(a);
        if self.dims(row) != (1, n) {
            return Err(shape_err("add_row", format!("[{m}x{n}] + {:?}", self.dims(row))));
        }
        let r = self.value(row).data();
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + r[i % n])
            .collect();
        Ok(self.push(Op::AddRow(a, row), Tensor::matrix(m, n, out)))
    }

    /// Scales row `i` of `a` by `col[i]`, where `col` is `[m×1]`.
    pub fn mul_col(&mut self, a: NodeId, col: NodeId) -> Result<NodeId> {
        let (m, n) = self.dims(a);
        if self.dims(col) != (m, 1) {
            return Err(shape_err("mul_col", format!("[{m}x{n}] * {:?}", self.dims(col))));
        }
        let c = self.value(col).data();
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x * c[i / n])
            .collect();
        Ok(self.push(Op::MulCol(a, col), Tensor::matrix(m, n, out)))
    }

    /// `scale · a + shift`
    pub fn affine(&mut self, a: NodeId, scale: f64, shift: f64) -> NodeId {
        let (m, n) = self.dims(a);
        let out = self.value(a).data().iter().map(|x| scale * x + shift).collect();
        self.push(Op::Affine(a, scale), Tensor::matrix(m, n, out))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let (m, n) = self.dims(a);
        let out = self.value(a).data().iter().map(|&x| f(x)).collect();
        self.push(op, Tensor::matrix(m, n, out))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            return Err(shape_err("concat_cols", "no inputs"));
        };
        let m = self.dims(first).0;
        if parts.iter().any(|&p| self.dims(p).0 != m) {
            return Err(shape_err("concat_cols", "row counts differ"));
        }
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        Ok(self.push(Op::ConcatCols(parts.to_vec()), Tensor::matrix(m, total, out)))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (m, n) = self.dims(a);
        if len == 0 || start + len > n {
            return Err(shape_err("slice_cols", format!("{start}..{} of {n}", start + len)));
        }
        let v = self.value(a);
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&v.row(r)[start..start + len]);
        }
        Ok(self.push(Op::SliceCols(a, start), Tensor::matrix(m, len, out)))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            return Err(shape_err("concat_rows", "no inputs"));
        };
        let n = self.dims(first).1;
        if parts.iter().any(|&p| self.dims(p).1 != n) {
            return Err(shape_err("concat_rows", "column counts differ"));
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let m = out.len() / n;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), Tensor::matrix(m, n, out)))
    }

    /// Selects rows by index (repeats allowed).
    pub fn gather_rows(&mut self, a: NodeId, rows: &[usize]) -> Result<NodeId> {
        let (m, n) = self.dims(a);
        if rows.is_empty() {
            return Err(shape_err("gather_rows", "no rows selected"));
        }
        let v = self.value(a);
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            if r >= m {
                return Err(NnError::IndexOutOfRange { index: r, len: m });
            }
            out.extend_from_slice(v.row(r));
        }
        Ok(self.push(
            Op::GatherRows(a, rows.to_vec()),
            Tensor::matrix(rows.len(), n, out),
        ))
    }

    /// Embedding lookup: row `ids[i]` of `table` becomes output row `i`.
    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let (v, e) = self.dims(table);
        if ids.is_empty() {
            return Err(NnError::EmptySequence);
        }
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * e);
        for &id in ids {
            if id >= v {
                return Err(NnError::IndexOutOfRange { index: id, len: v });
            }
            out.extend_from_slice(t.row(id));
        }
        Ok(self.push(
            Op::Embedding(table, ids.to_vec()),
            Tensor::matrix(ids.len(), e, out),
        ))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.dims(a);
        let v = self.value(a);
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            out.extend(softmax_row(v.row(r)));
        }
        self.push(Op::Softmax(a), Tensor::matrix(m, n, out))
    }

    /// Summed cross-entropy of row-wise softmax against class targets.
    /// Rows whose target is `None` contribute nothing.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[Option<usize>]) -> Result<NodeId> {
        let (m, n) = self.dims(logits);
        if targets.len() != m {
            return Err(shape_err("cross_entropy", format!("{m} rows, {} targets", targets.len())));
        }
        let v = self.value(logits);
        let mut loss = 0.0;
        for (r, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            if t >= n {
                return Err(NnError::IndexOutOfRange { index: t, len: n });
            }
            loss += log_sum_exp(v.row(r)) - v.get(r, t);
        }
        Ok(self.push(
            Op::CrossEntropy(logits, targets.to_vec()),
            Tensor::scalar(loss),
        ))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, a: NodeId, target: &Tensor) -> Result<NodeId> {
        let (m, n) = self.dims(a);
        if target.dims() != (m, n) {
            return Err(shape_err("mse", format!("{:?} vs {:?}", (m, n), target.dims())));
        }
        let loss = self
            .value(a)
            .data()
            .iter()
            .zip(target.data())
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            / (m * n) as f64;
        Ok(self.push(Op::Mse(a, target.clone()), Tensor::scalar(loss)))
    }

    /// Inverted dropout. Identity outside training mode or when `rate == 0`.
    pub fn dropout(&mut self, a: NodeId, rate: f64, rng: &mut RngStream) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::InvalidDropoutRate(rate));
        }
        if !self.training || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - rate;
        let (m, n) = self.dims(a);
        let mask: Vec<f64> = (0..m * n)
            .map(|_| if rng.uniform() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let out = zip_map(self.value(a).data(), &mask, |x, k| x * k);
        Ok(self.push(Op::Mask(a, mask), Tensor::matrix(m, n, out)))
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let (m, n) = self.dims(x);
        if self.dims(gamma) != (1, n) || self.dims(beta) != (1, n) {
            return Err(shape_err("layer_norm", "gain/bias must be [1xn]"));
        }
        let xv = self.value(x);
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut normed = Vec::with_capacity(m * n);
        let mut inv_std = Vec::with_capacity(m);
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for (j, v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                normed.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        Ok(self.push(
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normed,
                inv_std,
            },
            Tensor::matrix(m, n, out),
        ))
    }

    /// Sum of all elements, as a 1×1 node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    /// Adds up 1×1 nodes.
    pub fn add_scalars(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let mut acc = *parts
            .first()
            .ok_or_else(|| shape_err("add_scalars", "no inputs"))?;
        for &p in &parts[1..] {
            acc = self.add(acc, p)?;
        }
        Ok(acc)
    }

    /// Reverse pass from a 1×1 node. Fails on a non-finite loss.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(shape_err("backward", format!("loss must be 1x1, got {:?}", lv.shape())));
        }
        if !lv.item().is_finite() {
            return Err(NnError::NonFiniteLoss(lv.item()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::empty(self.store);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let out_val = node.value.as_ref();
            match &node.op {
                Op::Input => {}
                Op::Param(p) => {
                    let shape = self.store.value(*p).shape().to_vec();
                    let t = Tensor::new(shape, g).expect("gradient shape");
                    let slot = &mut out.grads[p.index()];
                    match slot {
                        Some(acc) => {
                            for (a, b) in acc.data_mut().iter_mut().zip(t.data()) {
                                *a += b;
                            }
                        }
                        None => *slot = Some(t),
                    }
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.dims(*a);
                    let n = self.dims(*b).1;
                    let da = matmul_nt(&g, self.value(*b).data(), m, n, k);
                    let db = matmul_tn(self.value(*a).data(), &g, m, k, n);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::MatMulT(a, b) => {
                    // c = a·bᵀ: da = g·b, db = gᵀ·a
                    let (m, k) = self.dims(*a);
                    let n = self.dims(*b).0;
                    let da = matmul(&g, self.value(*b).data(), m, n, k);
                    let db = matmul_tn(&g, self.value(*a).data(), m, n, k);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Mul(a, b) => {
                    let da = zip_map(&g, self.value(*b).data(), |x, y| x * y);
                    let db = zip_map(&g, self.value(*a).data(), |x, y| x * y);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::AddRow(a, row) => {
                    let n = self.dims(*row).1;
                    let mut dr = vec![0.0; n];
                    for (i, v) in g.iter().enumerate() {
                        dr[i % n] += v;
                    }
                    acc(&mut grads, *a, g);
                    acc(&mut grads, *row, dr);
                }
                Op::MulCol(a, col) => {
                    let (m, n) = self.dims(*a);
                    let av = self.value(*a).data();
                    let cv = self.value(*col).data();
                    let mut dc = vec![0.0; m];
                    let mut da = vec![0.0; m * n];
                    for i in 0..m * n {
                        da[i] = g[i] * cv[i / n];
                        dc[i / n] += g[i] * av[i];
                    }
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *col, dc);
                }
                Op::Affine(a, scale) => {
                    let da = g.iter().map(|v| v * scale).collect();
                    acc(&mut grads, *a, da);
                }
                Op::Sigmoid(a) => {
                    let y = out_val.unwrap().data();
                    let da = zip_map(&g, y, |gv, s| gv * s * (1.0 - s));
                    acc(&mut grads, *a, da);
                }
                Op::Tanh(a) => {
                    let y = out_val.unwrap().data();
                    let da = zip_map(&g, y, |gv, t| gv * (1.0 - t * t));
                    acc(&mut grads, *a, da);
                }
                Op::Relu(a) => {
                    let x = self.value(*a).data();
                    let da = zip_map(&g, x, |gv, xv| if xv > 0.0 { gv } else { 0.0 });
                    acc(&mut grads, *a, da);
                }
                Op::ConcatCols(parts) => {
                    let m = out_val.unwrap().rows();
                    let total = out_val.unwrap().cols();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.dims(p).1;
                        let mut dp = Vec::with_capacity(m * w);
                        for r in 0..m {
                            dp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        acc(&mut grads, p, dp);
                        offset += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let (m, n) = self.dims(*a);
                    let w = out_val.unwrap().cols();
                    let mut da = vec![0.0; m * n];
                    for r in 0..m {
                        da[r * n + start..r * n + start + w].copy_from_slice(&g[r * w..(r + 1) * w]);
                    }
                    acc(&mut grads, *a, da);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        acc(&mut grads, p, g[offset..offset + len].to_vec());
                        offset += len;
                    }
                }
                Op::GatherRows(a, rows) | Op::Embedding(a, rows) => {
                    let (m, n) = self.dims(*a);
                    let mut da = vec![0.0; m * n];
                    for (i, &r) in rows.iter().enumerate() {
                        for j in 0..n {
                            da[r * n + j] += g[i * n + j];
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::Softmax(a) => {
                    let y = out_val.unwrap();
                    let (m, n) = y.dims();
                    let mut da = vec![0.0; m * n];
                    for r in 0..m {
                        let yr = y.row(r);
                        let gr = &g[r * n..(r + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            da[r * n + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::CrossEntropy(a, targets) => {
                    let v = self.value(*a);
                    let (m, n) = v.dims();
                    let mut da = vec![0.0; m * n];
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        let p = softmax_row(v.row(r));
                        for j in 0..n {
                            da[r * n + j] = g[0] * (p[j] - if j == t { 1.0 } else { 0.0 });
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::Mse(a, target) => {
                    let x = self.value(*a).data();
                    let scale = 2.0 * g[0] / x.len() as f64;
                    let da = zip_map(x, target.data(), |xv, tv| scale * (xv - tv));
                    acc(&mut grads, *a, da);
                }
                Op::Mask(a, mask) => {
                    let da = zip_map(&g, mask, |x, k| x * k);
                    acc(&mut grads, *a, da);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    normed,
                    inv_std,
                } => {
                    let (m, n) = self.dims(*x);
                    let gv = self.value(*gamma).data();
                    let mut dx = vec![0.0; m * n];
                    let mut dg = vec![0.0; n];
                    let mut db = vec![0.0; n];
                    for r in 0..m {
                        let gr = &g[r * n..(r + 1) * n];
                        let hr = &normed[r * n..(r + 1) * n];
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..n {
                            dg[j] += gr[j] * hr[j];
                            db[j] += gr[j];
                            let dh = gr[j] * gv[j];
                            mean_dh += dh;
                            mean_dh_h += dh * hr[j];
                        }
                        mean_dh /= n as f64;
                        mean_dh_h /= n as f64;
                        for j in 0..n {
                            let dh = gr[j] * gv[j];
                            dx[r * n + j] = inv_std[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *gamma, dg);
                    acc(&mut grads, *beta, db);
                }
                Op::Sum(a) => {
                    let len = self.value(*a).len();
                    acc(&mut grads, *a, vec![g[0]; len]);
                }
            }
        }
        Ok(out)
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], id: NodeId, g: Vec<f64>) {
    match &mut grads[id.0] {
        Some(existing) => {
            for (a, b) in existing.iter_mut().zip(&g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::Init;

    fn store_with(values: &[(&str, usize, usize)], seed: u64) -> ParamStore {
        let mut rng = RngStream::new(seed);
        let mut store = ParamStore::new();
        for &(name, r, c) in values {
            store
                .add(name, r, c, Init::Normal { mean: 0.0, std: 1.0 }, &mut rng)
                .unwrap();
        }
        store
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store, false);
        let x = g.input(Tensor::row_vector(vec![0.0, 0.0]).unwrap());
        let y = g.softmax(x);
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn cross_entropy_of_uniform_prediction_is_log_classes() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store, false);
        let x = g.input(Tensor::row_vector(vec![0.3; 21]).unwrap());
        let l = g.cross_entropy(x, &[Some(4)]).unwrap();
        assert!((g.value(l).item() - 21f64.ln()).abs() < 1e-12);
        assert!((21f64.ln() - 3.0445).abs() < 1e-4);
    }

    #[test]
    fn cross_entropy_skips_untargeted_rows() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store, false);
        let x = g.input(Tensor::from_rows(&[vec![1.0, 2.0], vec![5.0, -1.0]]).unwrap());
        let l = g.cross_entropy(x, &[None, None]).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
    }

    #[test]
    fn dropout_rate_zero_is_identity_in_both_modes() {
        let store = ParamStore::new();
        let mut rng = RngStream::new(1);
        for training in [false, true] {
            let mut g = Graph::new(&store, training);
            let x = g.input(Tensor::row_vector(vec![1.0, -2.0, 3.0]).unwrap());
            let y = g.dropout(x, 0.0, &mut rng).unwrap();
            assert_eq!(g.value(y), g.value(x));
        }
    }

    #[test]
    fn dropout_rejects_rate_one() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store, true);
        let x = g.input(Tensor::scalar(1.0));
        let mut rng = RngStream::new(1);
        assert!(matches!(g.dropout(x, 1.0, &mut rng), Err(NnError::InvalidDropoutRate(_))));
    }

    #[test]
    fn inverted_dropout_preserves_expectation() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store, true);
        let x = g.input(Tensor::new(vec![1, 100_000], vec![1.0; 100_000]).unwrap());
        let mut rng = RngStream::new(9);
        let y = g.dropout(x, 0.5, &mut rng).unwrap();
        let mean = g.value(y).data().iter().sum::<f64>() / 100_000.0;
        // std of the mean is 1/sqrt(1e5) ≈ 0.0032
        assert!((mean - 1.0).abs() < 0.015, "{mean}");
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let store = store_with(&[("a", 2, 3), ("b", 2, 3)], 0);
        let mut g = Graph::new(&store, false);
        let a = g.param(store.id("a").unwrap());
        let b = g.param(store.id("b").unwrap());
        assert!(matches!(g.matmul(a, b), Err(NnError::ShapeMismatch { .. })));
    }

    #[test]
    fn backward_rejects_non_finite_loss() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store, false);
        let x = g.input(Tensor::scalar(f64::NAN));
        assert!(matches!(g.backward(x), Err(NnError::NonFiniteLoss(_))));
    }

    #[test]
    fn matmul_gradient_closed_form() {
        // loss = sum(A·B) ⇒ dA = 1·Bᵀ, dB = Aᵀ·1
        let store = store_with(&[("a", 2, 3), ("b", 3, 2)], 4);
        let mut g = Graph::new(&store, false);
        let a = g.param(store.id("a").unwrap());
        let b = g.param(store.id("b").unwrap());
        let c = g.matmul(a, b).unwrap();
        let l = g.sum(c);
        let grads = g.backward(l).unwrap();
        let bv = store.value(store.id("b").unwrap());
        let da = grads.get(store.id("a").unwrap()).unwrap();
        for i in 0..2 {
            for k in 0..3 {
                let expect = bv.get(k, 0) + bv.get(k, 1);
                assert!((da.get(i, k) - expect).abs() < 1e-12);
            }
        }
    }
}
