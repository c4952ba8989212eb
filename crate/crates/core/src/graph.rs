//! Reverse-mode differentiation over a dynamically built graph.
//!
//! A [`Graph`] is rebuilt for every forward pass. Nodes are appended in
//! evaluation order, so the node list is already a topological order and
//! [`Graph::backward`] is a single reverse sweep. Gradients of a node that
//! feeds several consumers are summed.
//!
//! Parameters live outside the graph in a [`ParamStore`]; [`Graph::param`]
//! copies a parameter in as a leaf and remembers its id so that
//! [`Graph::accumulate_param_grads`] can hand the gradients back.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{dot, sigmoid, softplus, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named learnable tensors, addressed by [`ParamId`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    tensors: Vec<Tensor>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            tensors: store.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(|t| t.fill(0.0));
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn add(&mut self, other: &Grads) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.tensors.iter_mut().for_each(|t| t.scale_assign(s));
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors.iter().map(Tensor::sq_norm).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Ln(Var),
    Sin(Var),
    Cos(Var),
    Tanh(Var),
    Softplus(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LogSoftmax {
        x: Var,
        axis: usize,
    },
    Sum(Var),
    CombineRows {
        x: Var,
        weights: Vec<Vec<(usize, f64)>>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    GatherCols {
        x: Var,
        idx: Vec<usize>,
    },
    StackRows {
        sources: Vec<Var>,
        idx: Vec<(usize, usize)>,
    },
    Transpose(Var),
    Reshape(Var),
    Pick {
        x: Var,
        index: usize,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        key_sets: Vec<Vec<usize>>,
        scale: f64,
        probs: Vec<Vec<f64>>,
    },
    LayerNorm {
        x: Var,
        inv_std: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Attention probabilities recorded by [`Graph::keyset_attention`].
pub struct AttentionTrace<'a> {
    pub key_sets: &'a [Vec<usize>],
    pub probs: &'a [Vec<f64>],
}

pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    params: HashMap<ParamId, Var>,
    score_mults: u64,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape(format!("{op}: shapes {:?} and {:?}", a.shape(), b.shape()))
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            params: HashMap::new(),
            score_mults: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Query-key score multiplications executed by attention ops so far.
    pub fn score_multiplications(&self) -> u64 {
        self.score_mults
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward root with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that tracks gradients but is not backed by a parameter store.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// The same parameter requested twice yields the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param, true);
        self.params.insert(id, v);
        v
    }

    pub fn attention_trace(&self, v: Var) -> Option<AttentionTrace<'_>> {
        match &self.nodes[v.0].op {
            Op::Attention { key_sets, probs, .. } => Some(AttentionTrace { key_sets, probs }),
            _ => None,
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if !x.same_shape(y) {
            return Err(shape_err("add", x, y));
        }
        let value = x.zip_map(y, |p, q| p + q);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if !x.same_shape(y) {
            return Err(shape_err("sub", x, y));
        }
        let value = x.zip_map(y, |p, q| p - q);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if !x.same_shape(y) {
            return Err(shape_err("mul", x, y));
        }
        let value = x.zip_map(y, |p, q| p * q);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Adds a `1 x c` row (or length-`c` vector) to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        let (rows, cols) = x.dims2();
        if r.len() != cols {
            return Err(shape_err("add_row", x, r));
        }
        let mut value = x.clone();
        for i in 0..rows {
            for (o, b) in value.data_mut()[i * cols..(i + 1) * cols].iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(value, Op::AddRow(a, row), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|v| v * s);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|v| v + s);
        let rg = self.rg(a);
        self.push(value, Op::AddScalar(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let rg = self.rg(a);
        self.push(value, Op::Exp(a), rg)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        let rg = self.rg(a);
        self.push(value, Op::Ln(a), rg)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::sin);
        let rg = self.rg(a);
        self.push(value, Op::Sin(a), rg)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::cos);
        let rg = self.rg(a);
        self.push(value, Op::Cos(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(softplus);
        let rg = self.rg(a);
        self.push(value, Op::Softplus(a), rg)
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let value = softmax_axis(self.value(a), axis, false)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Softmax { x: a, axis }, rg))
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let value = softmax_axis(self.value(a), axis, true)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::LogSoftmax { x: a, axis }, rg))
    }

    /// Sum of all entries, as a `1 x 1` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    /// Row `g` of the output is the mean of the rows listed in `groups[g]`.
    pub fn mean_pool(&mut self, x: Var, groups: &[Vec<usize>]) -> Result<Var> {
        let mut weights = Vec::with_capacity(groups.len());
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::InvalidHierarchy(format!("pooling group {g} is empty")));
            }
            let w = 1.0 / members.len() as f64;
            weights.push(members.iter().map(|&m| (m, w)).collect());
        }
        self.combine_rows(x, weights)
    }

    /// Row `g` of the output is `sum_j w_j * x[row_j]` over `weights[g]`.
    pub fn combine_rows(&mut self, x: Var, weights: Vec<Vec<(usize, f64)>>) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.dims2();
        if weights.is_empty() {
            return Err(Error::InvalidHierarchy("no output rows to pool".into()));
        }
        let mut out = vec![0.0; weights.len() * cols];
        for (g, ws) in weights.iter().enumerate() {
            let orow = &mut out[g * cols..(g + 1) * cols];
            for &(r, w) in ws {
                if r >= rows {
                    return Err(Error::InvalidHierarchy(format!("row {r} out of range for {rows} rows")));
                }
                for (o, v) in orow.iter_mut().zip(xv.row(r)) {
                    *o += w * v;
                }
            }
        }
        let value = Tensor::new(vec![weights.len(), cols], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::CombineRows { x, weights }, rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(shape_err("concat_rows", self.value(parts[0]), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let value = Tensor::new(vec![rows, cols], data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(shape_err("concat_cols", self.value(parts[0]), t));
            }
            total += t.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::new(vec![rows, total], data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.dims2();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            if i >= rows {
                return Err(Error::Shape(format!(
                    "gather_rows: index {i} out of range for {:?}",
                    xv.shape()
                )));
            }
            data.extend_from_slice(xv.row(i));
        }
        let value = Tensor::new(vec![idx.len(), cols], data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::GatherRows { x, idx: idx.to_vec() }, rg))
    }

    pub fn gather_cols(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.dims2();
        if let Some(&bad) = idx.iter().find(|&&j| j >= cols) {
            return Err(Error::Shape(format!(
                "gather_cols: index {bad} out of range for {:?}",
                xv.shape()
            )));
        }
        let mut data = Vec::with_capacity(rows * idx.len());
        for r in 0..rows {
            let row = xv.row(r);
            data.extend(idx.iter().map(|&j| row[j]));
        }
        let value = Tensor::new(vec![rows, idx.len()], data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::GatherCols { x, idx: idx.to_vec() }, rg))
    }

    /// Builds a matrix whose row `i` is row `idx[i].1` of `sources[idx[i].0]`.
    pub fn stack_rows(&mut self, sources: &[Var], idx: &[(usize, usize)]) -> Result<Var> {
        let cols = self.value(sources[0]).cols();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &(s, r) in idx {
            let t = self.value(sources[s]);
            if t.cols() != cols || r >= t.rows() {
                return Err(Error::Shape(format!("stack_rows: row {r} of source {:?}", t.shape())));
            }
            data.extend_from_slice(t.row(r));
        }
        let value = Tensor::new(vec![idx.len(), cols], data)?;
        let rg = sources.iter().any(|&s| self.rg(s));
        Ok(self.push(
            value,
            Op::StackRows {
                sources: sources.to_vec(),
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let value = self.value(x).transpose();
        let rg = self.rg(x);
        self.push(value, Op::Transpose(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Single entry (flat row-major index) as a `1 x 1` tensor.
    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        let xv = self.value(x);
        let v = *xv
            .data()
            .get(index)
            .ok_or_else(|| Error::Shape(format!("pick: index {index} out of range for {:?}", xv.shape())))?;
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(v), Op::Pick { x, index }, rg))
    }

    /// Scaled dot-product attention where query `i` only sees the keys in
    /// `key_sets[i]`: `out_i = sum_l softmax_l(scale * q_i . k_l) v_l`.
    pub fn keyset_attention(&mut self, q: Var, k: Var, v: Var, key_sets: Vec<Vec<usize>>, scale: f64) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (nq, dk) = qv.dims2();
        let (nk, dk2) = kv.dims2();
        let (nv, dv) = vv.dims2();
        if dk != dk2 || nk != nv || key_sets.len() != nq {
            return Err(Error::Shape(format!(
                "attention: q {:?}, k {:?}, v {:?}, {} key sets",
                qv.shape(),
                kv.shape(),
                vv.shape(),
                key_sets.len()
            )));
        }
        let mut out = vec![0.0; nq * dv];
        let mut probs = Vec::with_capacity(nq);
        let mut mults = 0u64;
        for (i, keys) in key_sets.iter().enumerate() {
            if keys.is_empty() || keys.iter().any(|&l| l >= nk) {
                return Err(Error::InvalidHierarchy(format!(
                    "key set {keys:?} for query {i} with {nk} keys"
                )));
            }
            let qi = qv.row(i);
            let mut s: Vec<f64> = keys.iter().map(|&l| scale * dot(qi, kv.row(l))).collect();
            mults += (keys.len() * dk) as u64;
            let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for e in &mut s {
                *e = (*e - m).exp();
                z += *e;
            }
            for e in &mut s {
                *e /= z;
            }
            let orow = &mut out[i * dv..(i + 1) * dv];
            for (&l, &p) in keys.iter().zip(&s) {
                for (o, x) in orow.iter_mut().zip(vv.row(l)) {
                    *o += p * x;
                }
            }
            probs.push(s);
        }
        self.score_mults += mults;
        let value = Tensor::new(vec![nq, dv], out)?;
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(
            value,
            Op::Attention {
                q,
                k,
                v,
                key_sets,
                scale,
                probs,
            },
            rg,
        ))
    }

    /// Per-row standardization without affine terms.
    pub fn layer_norm(&mut self, x: Var) -> Var {
        const EPS: f64 = 1e-5;
        let xv = self.value(x);
        let (rows, cols) = xv.dims2();
        let mut out = xv.clone();
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + EPS).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
            inv_std.push(inv);
        }
        let rg = self.rg(x);
        self.push(out, Op::LayerNorm { x, inv_std }, rg)
    }

    /// Back-propagates from a single-element `root`. Gradients from any
    /// previous call are discarded.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let shape = self.value(root).shape().to_vec();
        if self.value(root).len() != 1 {
            return Err(Error::Shape(format!("backward needs a scalar root, got {shape:?}")));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[root.0] = Some(Tensor::full(&shape, 1.0));
        for i in (0..=root.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g);
            }
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var, delta: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&mut self, i: usize, g: &Tensor) {
        // Split borrows: node values are read while grads of earlier nodes are written.
        let node = &self.nodes[i];
        let out = &node.value;
        let mut pending: Vec<(Var, Tensor)> = Vec::with_capacity(2);
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    pending.push((*a, g.matmul_t(bv)));
                }
                if self.rg(*b) {
                    pending.push((*b, av.t_matmul(g)));
                }
            }
            Op::Add(a, b) => {
                pending.push((*a, g.clone()));
                pending.push((*b, g.clone()));
            }
            Op::Sub(a, b) => {
                pending.push((*a, g.clone()));
                pending.push((*b, g.map(|v| -v)));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    pending.push((*a, g.zip_map(bv, |p, q| p * q)));
                }
                if self.rg(*b) {
                    pending.push((*b, g.zip_map(av, |p, q| p * q)));
                }
            }
            Op::AddRow(a, row) => {
                pending.push((*a, g.clone()));
                if self.rg(*row) {
                    let (rows, cols) = g.dims2();
                    let mut d = vec![0.0; cols];
                    for r in 0..rows {
                        for (o, v) in d.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    let shape = self.value(*row).shape().to_vec();
                    pending.push((*row, Tensor::new(shape, d).expect("row shape")));
                }
            }
            Op::Scale(a, s) => pending.push((*a, g.map(|v| v * s))),
            Op::AddScalar(a) => pending.push((*a, g.clone())),
            Op::Exp(a) => pending.push((*a, g.zip_map(out, |p, y| p * y))),
            Op::Ln(a) => pending.push((*a, g.zip_map(self.value(*a), |p, x| p / x))),
            Op::Sin(a) => pending.push((*a, g.zip_map(self.value(*a), |p, x| p * x.cos()))),
            Op::Cos(a) => pending.push((*a, g.zip_map(self.value(*a), |p, x| -p * x.sin()))),
            Op::Tanh(a) => pending.push((*a, g.zip_map(out, |p, y| p * (1.0 - y * y)))),
            Op::Softplus(a) => pending.push((*a, g.zip_map(self.value(*a), |p, x| p * sigmoid(x)))),
            Op::Softmax { x, axis } => {
                pending.push((*x, softmax_backward(out, g, *axis, false)));
            }
            Op::LogSoftmax { x, axis } => {
                pending.push((*x, softmax_backward(out, g, *axis, true)));
            }
            Op::Sum(a) => {
                let gv = g.item();
                pending.push((*a, Tensor::full(self.value(*a).shape(), gv)));
            }
            Op::CombineRows { x, weights } => {
                let xv = self.value(*x);
                let cols = xv.cols();
                let mut d = Tensor::zeros(xv.shape());
                for (r, ws) in weights.iter().enumerate() {
                    let grow = g.row(r);
                    for &(src, w) in ws {
                        for (o, v) in d.data_mut()[src * cols..(src + 1) * cols].iter_mut().zip(grow) {
                            *o += w * v;
                        }
                    }
                }
                pending.push((*x, d));
            }
            Op::ConcatRows(parts) => {
                let cols = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let shape = self.value(p).shape().to_vec();
                    let n = self.value(p).len();
                    if self.rg(p) {
                        let slice = g.data()[offset..offset + n].to_vec();
                        pending.push((p, Tensor::new(shape, slice).expect("concat part")));
                    }
                    offset += n;
                    debug_assert_eq!(offset % cols, 0);
                }
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    if self.rg(p) {
                        let mut d = Vec::with_capacity(rows * pc);
                        for r in 0..rows {
                            d.extend_from_slice(&g.row(r)[offset..offset + pc]);
                        }
                        let shape = self.value(p).shape().to_vec();
                        pending.push((p, Tensor::new(shape, d).expect("concat part")));
                    }
                    offset += pc;
                }
            }
            Op::GatherRows { x, idx } => {
                let xv = self.value(*x);
                let cols = xv.cols();
                let mut d = Tensor::zeros(xv.shape());
                for (r, &src) in idx.iter().enumerate() {
                    for (o, v) in d.data_mut()[src * cols..(src + 1) * cols].iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                pending.push((*x, d));
            }
            Op::GatherCols { x, idx } => {
                let xv = self.value(*x);
                let cols = xv.cols();
                let mut d = Tensor::zeros(xv.shape());
                for r in 0..g.rows() {
                    for (c, &src) in idx.iter().enumerate() {
                        d.data_mut()[r * cols + src] += g.get(r, c);
                    }
                }
                pending.push((*x, d));
            }
            Op::StackRows { sources, idx } => {
                let mut ds: Vec<Option<Tensor>> = vec![None; sources.len()];
                for (r, &(s, src_row)) in idx.iter().enumerate() {
                    if !self.rg(sources[s]) {
                        continue;
                    }
                    let t = self.value(sources[s]);
                    let cols = t.cols();
                    let d = ds[s].get_or_insert_with(|| Tensor::zeros(t.shape()));
                    for (o, v) in d.data_mut()[src_row * cols..(src_row + 1) * cols]
                        .iter_mut()
                        .zip(g.row(r))
                    {
                        *o += v;
                    }
                }
                for (s, d) in ds.into_iter().enumerate() {
                    if let Some(d) = d {
                        pending.push((sources[s], d));
                    }
                }
            }
            Op::Transpose(x) => pending.push((*x, g.transpose())),
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                pending.push((*x, g.reshape(&shape).expect("reshape back")));
            }
            Op::Pick { x, index } => {
                let mut d = Tensor::zeros(self.value(*x).shape());
                d.data_mut()[*index] = g.item();
                pending.push((*x, d));
            }
            Op::Attention {
                q,
                k,
                v,
                key_sets,
                scale,
                probs,
            } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let mut dq = Tensor::zeros(qv.shape());
                let mut dk = Tensor::zeros(kv.shape());
                let mut dv = Tensor::zeros(vv.shape());
                let dkc = kv.cols();
                let dvc = vv.cols();
                for (i, (keys, p)) in key_sets.iter().zip(probs).enumerate() {
                    let go = g.row(i);
                    let dp: Vec<f64> = keys.iter().map(|&l| dot(go, vv.row(l))).collect();
                    let inner: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                    for (j, &l) in keys.iter().enumerate() {
                        for (o, x) in dv.data_mut()[l * dvc..(l + 1) * dvc].iter_mut().zip(go) {
                            *o += p[j] * x;
                        }
                        let ds = scale * p[j] * (dp[j] - inner);
                        if ds == 0.0 {
                            continue;
                        }
                        let (qi, kl) = (qv.row(i), kv.row(l));
                        for c in 0..dkc {
                            dq.data_mut()[i * dkc + c] += ds * kl[c];
                            dk.data_mut()[l * dkc + c] += ds * qi[c];
                        }
                    }
                }
                pending.push((*q, dq));
                pending.push((*k, dk));
                pending.push((*v, dv));
            }
            Op::LayerNorm { x, inv_std } => {
                let (rows, cols) = out.dims2();
                let mut d = Tensor::zeros(out.shape());
                for r in 0..rows {
                    let (y, gy) = (out.row(r), g.row(r));
                    let mean_g = gy.iter().sum::<f64>() / cols as f64;
                    let mean_gy = dot(gy, y) / cols as f64;
                    for c in 0..cols {
                        d.data_mut()[r * cols + c] = inv_std[r] * (gy[c] - mean_g - y[c] * mean_gy);
                    }
                }
                pending.push((*x, d));
            }
        }
        for (v, d) in pending {
            self.acc(v, d);
        }
    }

    /// Adds the gradient of every parameter leaf into `grads`.
    pub fn accumulate_param_grads(&self, grads: &mut Grads) {
        for (&id, &v) in &self.params {
            if let Some(g) = self.grad(v) {
                grads.get_mut(id).add_assign(g);
            }
        }
    }

    pub fn param_var(&self, id: ParamId) -> Option<Var> {
        self.params.get(&id).copied()
    }
}

fn axis_layout(t: &Tensor, axis: usize) -> Result<(usize, usize, usize)> {
    let shape = t.shape();
    if axis >= shape.len() {
        return Err(Error::Shape(format!("softmax axis {axis} invalid for shape {shape:?}")));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// Max-subtracted softmax (or log-softmax) along `axis` of an n-d tensor.
pub fn softmax_axis(t: &Tensor, axis: usize, log: bool) -> Result<Tensor> {
    let (outer, n, inner) = axis_layout(t, axis)?;
    let mut out = t.clone();
    let data = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * n * inner + j * inner + i;
            let m = (0..n).map(|j| data[at(j)]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..n).map(|j| (data[at(j)] - m).exp()).sum();
            let lz = z.ln();
            for j in 0..n {
                let shifted = data[at(j)] - m;
                data[at(j)] = if log { shifted - lz } else { shifted.exp() / z };
            }
        }
    }
    Ok(out)
}

fn softmax_backward(y: &Tensor, g: &Tensor, axis: usize, log: bool) -> Tensor {
    let (outer, n, inner) = axis_layout(y, axis).expect("validated in forward");
    let mut d = Tensor::zeros(y.shape());
    let (yd, gd) = (y.data(), g.data());
    let dd = d.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * n * inner + j * inner + i;
            if log {
                let gs: f64 = (0..n).map(|j| gd[at(j)]).sum();
                for j in 0..n {
                    dd[at(j)] = gd[at(j)] - yd[at(j)].exp() * gs;
                }
            } else {
                let s: f64 = (0..n).map(|j| gd[at(j)] * yd[at(j)]).sum();
                for j in 0..n {
                    dd[at(j)] = yd[at(j)] * (gd[at(j)] - s);
                }
            }
        }
    }
    d
}
