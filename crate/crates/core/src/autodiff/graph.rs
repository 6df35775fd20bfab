use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Stability constant inside the layer-norm variance denominator.
pub const LAYER_NORM_EPS: f64 = 1e-5;

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    graph: u64,
    id: usize,
}

/// Differentiable primitive operations.
///
/// Elementwise binary ops require equal shapes, except that either side may be
/// a one-element tensor which is broadcast.
#[derive(Clone, Debug)]
pub enum Primitive {
    MatMul,
    Add,
    Sub,
    Mul,
    Scale(f64),
    Relu,
    Tanh,
    /// Row-wise normalization over the last axis of a matrix, no affine part.
    LayerNorm,
    /// Mean over all elements, producing a scalar.
    Mean,
    GatherRows(Vec<usize>),
    ConcatRows,
    Transpose,
    /// Mean over rows of `w[label] * (logsumexp(row) - row[label])`.
    CrossEntropy { labels: Vec<usize>, weights: Vec<f64> },
}

impl Primitive {
    fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Scale(_) => "scale",
            Primitive::Relu => "relu",
            Primitive::Tanh => "tanh",
            Primitive::LayerNorm => "layer-norm",
            Primitive::Mean => "mean",
            Primitive::GatherRows(_) => "gather-rows",
            Primitive::ConcatRows => "concat-rows",
            Primitive::Transpose => "transpose",
            Primitive::CrossEntropy { .. } => "cross-entropy",
        }
    }
}

#[derive(Debug)]
enum Cache {
    None,
    /// Normalized output and per-row inverse std.
    LayerNorm { inv_std: Vec<f64> },
    /// Softmax probabilities of the logits.
    Softmax(Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Option<Primitive>,
    inputs: Vec<usize>,
    cache: Cache,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// A tape of operations recorded during one forward pass.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and backward is a single reverse sweep.
#[derive(Debug)]
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn shapes_str(ts: &[&Tensor]) -> String {
    ts.iter()
        .map(|t| format!("{:?}", t.shape()))
        .collect::<Vec<_>>()
        .join(" vs ")
}

fn mismatch(op: &Primitive, ts: &[&Tensor]) -> Error {
    Error::ShapeMismatch {
        op: op.name(),
        shapes: shapes_str(ts),
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor, op: Option<Primitive>, inputs: Vec<usize>, cache: Cache, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            inputs,
            cache,
            requires_grad,
            grad: None,
        });
        Var {
            graph: self.id,
            id: self.nodes.len() - 1,
        }
    }

    /// Leaf that does not receive a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, None, vec![], Cache::None, false)
    }

    /// Leaf whose gradient is filled by [`Graph::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, None, vec![], Cache::None, true)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.id >= self.nodes.len() {
            return Err(Error::DetachedVar);
        }
        Ok(v.id)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.graph, self.id, "variable from a different graph");
        &self.nodes[v.id].value
    }

    /// Gradient accumulated for `v` by the last backward sweep.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        if v.graph != self.id {
            return None;
        }
        let node = &self.nodes[v.id];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    /// Record `kind` applied to `inputs` and return the output node.
    pub fn apply(&mut self, kind: Primitive, inputs: &[Var]) -> Result<Var> {
        let ids = inputs
            .iter()
            .map(|&v| self.check(v))
            .collect::<Result<Vec<_>>>()?;
        let arity_ok = match kind {
            Primitive::MatMul | Primitive::Add | Primitive::Sub | Primitive::Mul => ids.len() == 2,
            Primitive::ConcatRows => !ids.is_empty(),
            _ => ids.len() == 1,
        };
        if !arity_ok {
            return Err(Error::ShapeMismatch {
                op: kind.name(),
                shapes: format!("{} inputs", ids.len()),
            });
        }
        let ins: Vec<&Tensor> = ids.iter().map(|&i| &self.nodes[i].value).collect();
        let (value, cache) = forward(&kind, &ins)?;
        let requires_grad = ids.iter().any(|&i| self.nodes[i].requires_grad);
        Ok(self.push(value, Some(kind), ids, cache, requires_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(Primitive::Scale(c), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Relu, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Tanh, &[a])
    }

    pub fn layer_norm(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::LayerNorm, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Mean, &[a])
    }

    pub fn gather_rows(&mut self, a: Var, rows: Vec<usize>) -> Result<Var> {
        self.apply(Primitive::GatherRows(rows), &[a])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(Primitive::ConcatRows, parts)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Transpose, &[a])
    }

    pub fn cross_entropy(&mut self, logits: Var, labels: Vec<usize>, weights: Vec<f64>) -> Result<Var> {
        self.apply(Primitive::CrossEntropy { labels, weights }, &[logits])
    }

    /// Reverse sweep from a scalar `loss`, filling the gradient of every
    /// parameter leaf it depends on.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = self.check(loss)?;
        if !self.nodes[root].value.is_scalar() {
            return Err(Error::NonScalarLoss(self.nodes[root].value.shape().to_vec()));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[root].grad = Some(vec![1.0]);

        for idx in (0..=root).rev() {
            let Some(upstream) = self.nodes[idx].grad.take() else {
                continue;
            };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let node = &self.nodes[idx];
            let Some(op) = node.op.as_ref() else {
                // leaf: keep the accumulated gradient
                self.nodes[idx].grad = Some(upstream);
                continue;
            };
            let ins: Vec<&Tensor> = node.inputs.iter().map(|&i| &self.nodes[i].value).collect();
            let local = backward_rule(op, &ins, &node.value, &node.cache, &upstream);
            let inputs = node.inputs.clone();
            for (input, g) in inputs.into_iter().zip(local) {
                if !self.nodes[input].requires_grad {
                    continue;
                }
                match &mut self.nodes[input].grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }
}

fn broadcast_pair<'a>(op: &Primitive, a: &'a Tensor, b: &'a Tensor) -> Result<Vec<usize>> {
    if a.shape() == b.shape() {
        Ok(a.shape().to_vec())
    } else if b.is_scalar() {
        Ok(a.shape().to_vec())
    } else if a.is_scalar() {
        Ok(b.shape().to_vec())
    } else {
        Err(mismatch(op, &[a, b]))
    }
}

fn elementwise(a: &Tensor, b: &Tensor, shape: Vec<usize>, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let n: usize = shape.iter().product();
    let av = a.data();
    let bv = b.data();
    let data = (0..n)
        .map(|i| {
            let x = if av.len() == 1 { av[0] } else { av[i] };
            let y = if bv.len() == 1 { bv[0] } else { bv[i] };
            f(x, y)
        })
        .collect();
    Tensor::new(shape, data).expect("elementwise shape")
}

fn forward(op: &Primitive, ins: &[&Tensor]) -> Result<(Tensor, Cache)> {
    let out = match op {
        Primitive::MatMul => {
            let (a, b) = (ins[0], ins[1]);
            let ((m, k), (k2, n)) = match (a.dims2(), b.dims2()) {
                (Some(x), Some(y)) => (x, y),
                _ => return Err(mismatch(op, ins)),
            };
            if k != k2 {
                return Err(mismatch(op, ins));
            }
            Tensor::matrix(m, n, matmul_raw(a.data(), b.data(), m, k, n))?
        }
        Primitive::Add | Primitive::Sub | Primitive::Mul => {
            let (a, b) = (ins[0], ins[1]);
            let shape = broadcast_pair(op, a, b)?;
            match op {
                Primitive::Add => elementwise(a, b, shape, |x, y| x + y),
                Primitive::Sub => elementwise(a, b, shape, |x, y| x - y),
                _ => elementwise(a, b, shape, |x, y| x * y),
            }
        }
        Primitive::Scale(c) => ins[0].map(|v| c * v),
        Primitive::Relu => ins[0].map(|v| if v > 0.0 { v } else { 0.0 }),
        Primitive::Tanh => ins[0].map(f64::tanh),
        Primitive::LayerNorm => {
            let a = ins[0];
            let (rows, cols) = a.dims2().ok_or_else(|| mismatch(op, ins))?;
            let mut data = Vec::with_capacity(rows * cols);
            let mut inv_std = Vec::with_capacity(rows);
            for r in 0..rows {
                let row = a.row(r);
                let mu = row.iter().sum::<f64>() / cols as f64;
                let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / cols as f64;
                let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                inv_std.push(is);
                data.extend(row.iter().map(|v| (v - mu) * is));
            }
            return Ok((Tensor::matrix(rows, cols, data)?, Cache::LayerNorm { inv_std }));
        }
        Primitive::Mean => {
            let a = ins[0];
            Tensor::scalar(a.data().iter().sum::<f64>() / a.numel() as f64)
        }
        Primitive::GatherRows(rows) => {
            let a = ins[0];
            let (r, c) = a.dims2().ok_or_else(|| mismatch(op, ins))?;
            if rows.is_empty() || rows.iter().any(|&i| i >= r) {
                return Err(Error::ShapeMismatch {
                    op: op.name(),
                    shapes: format!("{:?} gathering rows {:?}", a.shape(), rows),
                });
            }
            let mut data = Vec::with_capacity(rows.len() * c);
            for &i in rows {
                data.extend_from_slice(a.row(i));
            }
            Tensor::matrix(rows.len(), c, data)?
        }
        Primitive::ConcatRows => {
            let cols = ins[0].dims2().map(|d| d.1);
            if ins.iter().any(|t| t.dims2().map(|d| d.1) != cols) || cols.is_none() {
                return Err(mismatch(op, ins));
            }
            let rows: usize = ins.iter().map(|t| t.shape()[0]).sum();
            let data = ins.iter().flat_map(|t| t.data().iter().copied()).collect();
            Tensor::matrix(rows, cols.unwrap(), data)?
        }
        Primitive::Transpose => {
            let a = ins[0];
            let (r, c) = a.dims2().ok_or_else(|| mismatch(op, ins))?;
            Tensor::matrix(c, r, transpose_raw(a.data(), r, c))?
        }
        Primitive::CrossEntropy { labels, weights } => {
            let a = ins[0];
            let (b, c) = a.dims2().ok_or_else(|| mismatch(op, ins))?;
            if labels.len() != b || weights.len() != c {
                return Err(Error::ShapeMismatch {
                    op: op.name(),
                    shapes: format!("logits {:?}, {} labels, {} weights", a.shape(), labels.len(), weights.len()),
                });
            }
            if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= c) {
                return Err(Error::LabelOutOfRange {
                    index,
                    label,
                    classes: c,
                });
            }
            let mut probs = Vec::with_capacity(b * c);
            let mut total = 0.0;
            for (i, &y) in labels.iter().enumerate() {
                let row = a.row(i);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum_exp: f64 = row.iter().map(|v| (v - max).exp()).sum();
                let lse = max + sum_exp.ln();
                total += weights[y] * (lse - row[y]);
                probs.extend(row.iter().map(|v| (v - lse).exp()));
            }
            return Ok((Tensor::scalar(total / b as f64), Cache::Softmax(probs)));
        }
    };
    Ok((out, Cache::None))
}

fn reduce_to(grad: &[f64], input: &Tensor) -> Vec<f64> {
    if input.numel() == grad.len() {
        grad.to_vec()
    } else {
        vec![grad.iter().sum()]
    }
}

fn backward_rule(op: &Primitive, ins: &[&Tensor], out: &Tensor, cache: &Cache, up: &[f64]) -> Vec<Vec<f64>> {
    match op {
        Primitive::MatMul => {
            let (a, b) = (ins[0], ins[1]);
            let (m, k) = a.dims2().unwrap();
            let n = b.shape()[1];
            let bt = transpose_raw(b.data(), k, n);
            let at = transpose_raw(a.data(), m, k);
            vec![matmul_raw(up, &bt, m, n, k), matmul_raw(&at, up, k, m, n)]
        }
        Primitive::Add => vec![reduce_to(up, ins[0]), reduce_to(up, ins[1])],
        Primitive::Sub => {
            let neg: Vec<f64> = up.iter().map(|v| -v).collect();
            vec![reduce_to(up, ins[0]), reduce_to(&neg, ins[1])]
        }
        Primitive::Mul => {
            let (a, b) = (ins[0], ins[1]);
            let pick = |t: &Tensor, i: usize| if t.numel() == 1 { t.data()[0] } else { t.data()[i] };
            let ga: Vec<f64> = up.iter().enumerate().map(|(i, g)| g * pick(b, i)).collect();
            let gb: Vec<f64> = up.iter().enumerate().map(|(i, g)| g * pick(a, i)).collect();
            vec![reduce_to(&ga, a), reduce_to(&gb, b)]
        }
        Primitive::Scale(c) => vec![up.iter().map(|g| c * g).collect()],
        Primitive::Relu => vec![up
            .iter()
            .zip(ins[0].data())
            .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
            .collect()],
        Primitive::Tanh => vec![up.iter().zip(out.data()).map(|(g, y)| g * (1.0 - y * y)).collect()],
        Primitive::LayerNorm => {
            let Cache::LayerNorm { inv_std } = cache else {
                unreachable!("layer norm without cache")
            };
            let (rows, cols) = out.dims2().unwrap();
            let n = cols as f64;
            let mut g = vec![0.0; rows * cols];
            for r in 0..rows {
                let yh = out.row(r);
                let dy = &up[r * cols..(r + 1) * cols];
                let mean_dy = dy.iter().sum::<f64>() / n;
                let mean_dy_yh = dy.iter().zip(yh).map(|(a, b)| a * b).sum::<f64>() / n;
                for c in 0..cols {
                    g[r * cols + c] = inv_std[r] * (dy[c] - mean_dy - yh[c] * mean_dy_yh);
                }
            }
            vec![g]
        }
        Primitive::Mean => {
            let n = ins[0].numel();
            vec![vec![up[0] / n as f64; n]]
        }
        Primitive::GatherRows(rows) => {
            let a = ins[0];
            let c = a.shape()[1];
            let mut g = vec![0.0; a.numel()];
            for (k, &i) in rows.iter().enumerate() {
                for j in 0..c {
                    g[i * c + j] += up[k * c + j];
                }
            }
            vec![g]
        }
        Primitive::ConcatRows => {
            let mut offset = 0;
            ins.iter()
                .map(|t| {
                    let g = up[offset..offset + t.numel()].to_vec();
                    offset += t.numel();
                    g
                })
                .collect()
        }
        Primitive::Transpose => {
            let (r, c) = ins[0].dims2().unwrap();
            vec![transpose_raw(up, c, r)]
        }
        Primitive::CrossEntropy { labels, weights } => {
            let Cache::Softmax(probs) = cache else {
                unreachable!("cross entropy without cache")
            };
            let (b, c) = ins[0].dims2().unwrap();
            let mut g = probs.clone();
            for (i, &y) in labels.iter().enumerate() {
                let scale = up[0] * weights[y] / b as f64;
                let row = &mut g[i * c..(i + 1) * c];
                row[y] -= 1.0;
                row.iter_mut().for_each(|v| *v *= scale);
            }
            vec![g]
        }
    }
}
