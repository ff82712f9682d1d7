//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every primitive evaluated on it. Parameters are read in
//! place from a borrowed [`ParamSet`]; all other node values are owned by the
//! tape. Node ids increase monotonically, so the insertion order is already a
//! topological order and [`Tape::backward`] simply walks it in reverse.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamSet, Shape, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Storage {
    Owned(Vec<f64>),
    Param(ParamId),
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    Stack(Vec<Var>),
    Slice { src: Var, start: usize },
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Gather { table: Var, ids: Vec<usize> },
    SumAll(Var),
    MeanAll(Var),
    Pick { src: Var, index: usize },
    MaskMul { src: Var, mask: Vec<f64> },
}

struct Node {
    shape: Shape,
    storage: Storage,
    op: Op,
    needs_grad: bool,
}

pub struct Tape<'p> {
    params: Option<&'p ParamSet>,
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node>,
    grad_enabled: bool,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::standalone()
    }
}

impl<'p> Tape<'p> {
    /// A tape that tracks gradients into `params`.
    pub fn new(params: &'p ParamSet) -> Self {
        Tape {
            params: Some(params),
            param_vars: vec![None; params.len()],
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape over `params` that records nothing for differentiation.
    pub fn inference(params: &'p ParamSet) -> Self {
        Tape {
            grad_enabled: false,
            ..Self::new(params)
        }
    }

    /// A tape with no parameter set; only explicit leaves.
    pub fn standalone() -> Self {
        Tape {
            params: None,
            param_vars: Vec::new(),
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of nodes that will participate in `backward`.
    pub fn recorded_ops(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.needs_grad && !matches!(n.op, Op::Leaf))
            .count()
    }

    pub fn shape(&self, v: Var) -> &Shape {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match &self.nodes[v.0].storage {
            Storage::Owned(d) => d,
            Storage::Param(id) => self
                .params
                .expect("parameter node without parameter set")
                .get(*id)
                .data(),
        }
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).clone(), self.value(v).to_vec())
            .expect("tape nodes always hold well-formed tensors")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    // ---------------------------------------------------------------- leaves

    /// Leaf node holding a copy of `t`; tracked iff `t.requires_grad`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let needs = self.grad_enabled && t.requires_grad;
        self.nodes.push(Node {
            shape: t.shape().clone(),
            storage: Storage::Owned(t.data().to_vec()),
            op: Op::Leaf,
            needs_grad: needs,
        });
        Var(self.nodes.len() - 1)
    }

    /// Untracked constant.
    pub fn constant(&mut self, shape: impl Into<Shape>, data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.leaf(&t))
    }

    pub fn constant_vector(&mut self, data: Vec<f64>) -> Var {
        self.leaf(&Tensor::vector(data))
    }

    pub fn zeros(&mut self, len: usize) -> Var {
        self.constant_vector(vec![0.0; len])
    }

    /// Node aliasing a parameter. Repeated calls return the same node, so
    /// every use of a parameter fans out from one leaf.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let t = self
            .params
            .expect("Tape::param on a standalone tape")
            .get(id);
        self.nodes.push(Node {
            shape: t.shape().clone(),
            storage: Storage::Param(id),
            op: Op::Leaf,
            needs_grad: self.grad_enabled && t.requires_grad,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    // ------------------------------------------------------------ primitives

    fn push(&mut self, name: &'static str, shape: Shape, data: Vec<f64>, op: Op, inputs: &[Var]) -> Result<Var> {
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("{name} output"),
            });
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            shape,
            storage: Storage::Owned(data),
            op: if needs_grad { op } else { Op::Leaf },
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::ShapeMismatch {
            op,
            left: self.shape(a).dims().to_vec(),
            right: self.shape(b).dims().to_vec(),
        }
    }

    /// Matrix product. Accepts `[m,k]x[k,n]`, `[m,k]x[k]`, `[k]x[k,n]` and
    /// `[k]x[k]` (dot product, scalar result).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k, n, out) = matmul_dims(self.shape(a), self.shape(b)).ok_or_else(|| self.mismatch("matmul", a, b))?;
        let data = matmul_kernel(self.value(a), self.value(b), m, k, n);
        self.push("matmul", out, data, Op::MatMul(a, b), &[a, b])
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Vec<f64>> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch(name, a, b));
        }
        Ok(self.value(a).iter().zip(self.value(b)).map(|(x, y)| f(*x, *y)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let data = self.zip_with("add", a, b, |x, y| x + y)?;
        let shape = self.shape(a).clone();
        self.push("add", shape, data, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let data = self.zip_with("sub", a, b, |x, y| x - y)?;
        let shape = self.shape(a).clone();
        self.push("sub", shape, data, Op::Sub(a, b), &[a, b])
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let data = self.zip_with("mul", a, b, |x, y| x * y)?;
        let shape = self.shape(a).clone();
        self.push("mul", shape, data, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let data = self.value(a).iter().map(|x| x * factor).collect();
        let shape = self.shape(a).clone();
        self.push("scale", shape, data, Op::Scale(a, factor), &[a])
    }

    /// Joins scalars and vectors end to end into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::invalid("concat of zero tensors"));
        }
        let mut data = Vec::new();
        for &p in parts {
            if self.shape(p).rank() > 1 {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    left: self.shape(p).dims().to_vec(),
                    right: Vec::new(),
                });
            }
            data.extend_from_slice(self.value(p));
        }
        let shape = Shape::new(&[data.len()]);
        self.push("concat", shape, data, Op::Concat(parts.to_vec()), parts)
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let first = *rows.first().ok_or_else(|| Error::invalid("stack of zero tensors"))?;
        if self.shape(first).rank() != 1 {
            return Err(self.mismatch("stack", first, first));
        }
        let mut data = Vec::with_capacity(rows.len() * self.shape(first).numel());
        for &r in rows {
            if self.shape(r) != self.shape(first) {
                return Err(self.mismatch("stack", first, r));
            }
            data.extend_from_slice(self.value(r));
        }
        let shape = Shape::new(&[rows.len(), self.shape(first).numel()]);
        self.push("stack", shape, data, Op::Stack(rows.to_vec()), rows)
    }

    /// Copies `len` entries of a vector starting at `start`.
    pub fn slice(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(src);
        if shape.rank() != 1 || len == 0 || start + len > shape.numel() {
            return Err(Error::ShapeMismatch {
                op: "slice",
                left: shape.dims().to_vec(),
                right: vec![start, start + len],
            });
        }
        let data = self.value(src)[start..start + len].to_vec();
        self.push("slice", Shape::new(&[len]), data, Op::Slice { src, start }, &[src])
    }

    fn map(&mut self, name: &'static str, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let data = self.value(a).iter().map(|x| f(*x)).collect();
        let shape = self.shape(a).clone();
        self.push(name, shape, data, op, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map("tanh", a, Op::Tanh(a), libm::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map("sigmoid", a, Op::Sigmoid(a), sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map("relu", a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    /// Softmax over the trailing axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let width = self.shape(a).last();
        let mut data = self.value(a).to_vec();
        data.chunks_mut(width).for_each(softmax_in_place);
        let shape = self.shape(a).clone();
        self.push("softmax", shape, data, Op::Softmax(a), &[a])
    }

    /// Log-softmax over the trailing axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let width = self.shape(a).last();
        let mut data = self.value(a).to_vec();
        data.chunks_mut(width).for_each(log_softmax_in_place);
        let shape = self.shape(a).clone();
        self.push("log_softmax", shape, data, Op::LogSoftmax(a), &[a])
    }

    /// Rows `ids` of a `[rows, dim]` table, as a `[ids.len(), dim]` matrix.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, dim) = self.table_dims(table)?;
        if ids.is_empty() {
            return Err(Error::invalid("embedding_gather with no ids"));
        }
        let data = self.gather_rows(table, ids, rows, dim)?;
        let shape = Shape::new(&[ids.len(), dim]);
        self.push("embedding_gather", shape, data, Op::Gather { table, ids: ids.to_vec() }, &[table])
    }

    /// Single row of a `[rows, dim]` table, as a `[dim]` vector.
    pub fn row(&mut self, table: Var, id: usize) -> Result<Var> {
        let (rows, dim) = self.table_dims(table)?;
        let data = self.gather_rows(table, &[id], rows, dim)?;
        self.push("embedding_gather", Shape::new(&[dim]), data, Op::Gather { table, ids: vec![id] }, &[table])
    }

    fn table_dims(&self, table: Var) -> Result<(usize, usize)> {
        match self.shape(table).dims() {
            &[r, d] => Ok((r, d)),
            other => Err(Error::ShapeMismatch {
                op: "embedding_gather",
                left: other.to_vec(),
                right: Vec::new(),
            }),
        }
    }

    fn gather_rows(&self, table: Var, ids: &[usize], rows: usize, dim: usize) -> Result<Vec<f64>> {
        let src = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= rows {
                return Err(Error::OutOfRange {
                    what: "embedding row",
                    index: id,
                    len: rows,
                });
            }
            data.extend_from_slice(&src[id * dim..(id + 1) * dim]);
        }
        Ok(data)
    }

    pub fn reduce_sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().sum();
        self.push("reduce_sum", Shape::scalar(), vec![s], Op::SumAll(a), &[a])
    }

    pub fn reduce_mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        self.push("reduce_mean", Shape::scalar(), vec![s], Op::MeanAll(a), &[a])
    }

    /// Scalar at flat position `index`.
    pub fn pick(&mut self, src: Var, index: usize) -> Result<Var> {
        let len = self.shape(src).numel();
        let x = *self.value(src).get(index).ok_or(Error::OutOfRange { what: "pick", index, len })?;
        self.push("pick", Shape::scalar(), vec![x], Op::Pick { src, index }, &[src])
    }

    /// Element-wise product with a constant mask (dropout).
    pub fn mask_mul(&mut self, src: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.shape(src).numel() {
            return Err(Error::ShapeMismatch {
                op: "mask_mul",
                left: self.shape(src).dims().to_vec(),
                right: vec![mask.len()],
            });
        }
        let data = self.value(src).iter().zip(&mask).map(|(x, m)| x * m).collect();
        let shape = self.shape(src).clone();
        self.push("mask_mul", shape, data, Op::MaskMul { src, mask }, &[src])
    }

    /// Sum of several same-shaped nodes.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms.split_first().ok_or_else(|| Error::invalid("add_all of zero terms"))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    // -------------------------------------------------------------- backward

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.backward_scaled(loss, 1.0)
    }

    /// Reverse pass seeded with `d loss = seed` (used to average losses
    /// across a batch without an extra node).
    pub fn backward_scaled(&self, loss: Var, seed: f64) -> Result<Gradients> {
        if self.shape(loss).numel() != 1 {
            return Err(Error::NonScalarLoss {
                shape: self.shape(loss).dims().to_vec(),
            });
        }
        if !self.scalar(loss).is_finite() {
            return Err(Error::NonFinite { what: "loss".into() });
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        if self.nodes[loss.0].needs_grad {
            grads[loss.0] = Some(vec![seed]);
        }

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
        }

        for (idx, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite {
                        what: format!("gradient of node {idx}"),
                    });
                }
            }
        }

        let params = self
            .param_vars
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
            .collect();
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = self.value(Var(idx));
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let n = self.nodes[v.0].shape.numel();
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            f(buf);
        };
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k, n, _) = matmul_dims(self.shape(*a), self.shape(*b)).expect("validated in forward");
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, &mut |da| {
                    // dA = dY * B^T
                    for i in 0..m {
                        for p in 0..k {
                            let row = &bv[p * n..(p + 1) * n];
                            let gi = &g[i * n..(i + 1) * n];
                            da[i * k + p] += gi.iter().zip(row).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                acc(*b, &mut |db| {
                    // dB = A^T * dY
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let a_ip = av[i * k + p];
                            if a_ip == 0.0 {
                                continue;
                            }
                            db[p * n..(p + 1) * n].iter_mut().zip(gi).for_each(|(d, x)| *d += a_ip * x);
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |d| add_assign(d, g));
                acc(*b, &mut |d| add_assign(d, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| add_assign(d, g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, x)| *d -= x));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, &mut |d| d.iter_mut().zip(g).zip(bv).for_each(|((d, x), y)| *d += x * y));
                acc(*b, &mut |d| d.iter_mut().zip(g).zip(av).for_each(|((d, x), y)| *d += x * y));
            }
            Op::Scale(a, c) => acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, x)| *d += c * x)),
            Op::Concat(parts) | Op::Stack(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.shape(p).numel();
                    let chunk = &g[offset..offset + len];
                    acc(p, &mut |d| add_assign(d, chunk));
                    offset += len;
                }
            }
            Op::Slice { src, start } => {
                let s = *start;
                acc(*src, &mut |d| add_assign(&mut d[s..s + g.len()], g));
            }
            Op::Tanh(a) => acc(*a, &mut |d| {
                d.iter_mut().zip(g).zip(y).for_each(|((d, x), y)| *d += x * (1.0 - y * y))
            }),
            Op::Sigmoid(a) => acc(*a, &mut |d| {
                d.iter_mut().zip(g).zip(y).for_each(|((d, x), y)| *d += x * y * (1.0 - y))
            }),
            Op::Relu(a) => acc(*a, &mut |d| {
                d.iter_mut().zip(g).zip(y).for_each(|((d, x), y)| {
                    if *y > 0.0 {
                        *d += x
                    }
                })
            }),
            Op::Softmax(a) => {
                let width = self.shape(*a).last();
                acc(*a, &mut |d| {
                    for ((d, g), y) in d.chunks_mut(width).zip(g.chunks(width)).zip(y.chunks(width)) {
                        let dot: f64 = g.iter().zip(y).map(|(g, y)| g * y).sum();
                        d.iter_mut().zip(g).zip(y).for_each(|((d, g), y)| *d += y * (g - dot));
                    }
                })
            }
            Op::LogSoftmax(a) => {
                let width = self.shape(*a).last();
                acc(*a, &mut |d| {
                    for ((d, g), y) in d.chunks_mut(width).zip(g.chunks(width)).zip(y.chunks(width)) {
                        let total: f64 = g.iter().sum();
                        d.iter_mut().zip(g).zip(y).for_each(|((d, g), y)| *d += g - libm::exp(*y) * total);
                    }
                })
            }
            Op::Gather { table, ids } => {
                let dim = self.shape(*table).last();
                acc(*table, &mut |d| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_assign(&mut d[id * dim..(id + 1) * dim], &g[r * dim..(r + 1) * dim]);
                    }
                })
            }
            Op::SumAll(a) => acc(*a, &mut |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::MeanAll(a) => {
                let n = self.shape(*a).numel() as f64;
                acc(*a, &mut |d| d.iter_mut().for_each(|d| *d += g[0] / n))
            }
            Op::Pick { src, index } => {
                let i = *index;
                acc(*src, &mut |d| d[i] += g[0])
            }
            Op::MaskMul { src, mask } => acc(*src, &mut |d| {
                d.iter_mut().zip(g).zip(mask).for_each(|((d, g), m)| *d += g * m)
            }),
        }
    }
}

/// Gradients produced by one reverse pass. Only leaves (explicit leaves and
/// parameters) keep their buffers.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of the loss with respect to a leaf; `None` if the leaf was
    /// not reachable from the loss.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, v)| self.wrt(*v))
    }

    /// Adds every parameter gradient into the matching tensor's buffer.
    pub fn accumulate_into(&self, params: &mut ParamSet) {
        for &(id, v) in &self.params {
            if let Some(g) = self.wrt(v) {
                params.get_mut(id).accumulate_grad(g);
            }
        }
    }
}

fn add_assign(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn matmul_dims(a: &Shape, b: &Shape) -> Option<(usize, usize, usize, Shape)> {
    match (a.dims(), b.dims()) {
        (&[m, k], &[k2, n]) if k == k2 => Some((m, k, n, Shape::new(&[m, n]))),
        (&[m, k], &[k2]) if k == k2 => Some((m, k, 1, Shape::new(&[m]))),
        (&[k], &[k2, n]) if k == k2 => Some((1, k, n, Shape::new(&[n]))),
        (&[k], &[k2]) if k == k2 => Some((1, k, 1, Shape::scalar())),
        _ => None,
    }
}

fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    if n == 1 {
        for i in 0..m {
            out[i] = a[i * k..(i + 1) * k].iter().zip(b).map(|(x, y)| x * y).sum();
        }
        return out;
    }
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == 0.0 {
                continue;
            }
            row.iter_mut().zip(&b[p * n..(p + 1) * n]).for_each(|(o, x)| *o += a_ip * x);
        }
    }
    out
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = libm::exp(*x - max);
        total += *x;
    }
    row.iter_mut().for_each(|x| *x /= total);
}

pub(crate) fn log_softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + libm::log(row.iter().map(|x| libm::exp(x - max)).sum::<f64>());
    row.iter_mut().for_each(|x| *x -= lse);
}
