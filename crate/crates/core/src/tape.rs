//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] records one forward pass as a flat list of nodes. Parameters are
//! borrowed from a [`ParamStore`] rather than copied, so building a graph per
//! sample stays cheap. [`Graph::backward`] walks the list in reverse and
//! accumulates parameter gradients into a [`GradStore`].
//!
//! Every value is a 2-D matrix; vectors are `1 x n` rows and scalars `1 x 1`.

use std::collections::HashMap;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis, Zip};

pub type Matrix = Array2<f64>;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Handle to a tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
    lookup: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. Panics on a duplicate name, which is a model-construction bug.
    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(
            !self.lookup.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.values.len());
        self.lookup.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Matrix> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Matrix)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Total scalar count.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Scalar count over parameters whose name starts with `prefix`.
    pub fn scalar_count_with_prefix(&self, prefix: &str) -> usize {
        self.iter()
            .filter(|(_, n, _)| n.starts_with(prefix))
            .map(|(_, _, v)| v.len())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Gradient accumulator shaped like a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradStore {
    grads: Vec<Matrix>,
}

impl GradStore {
    pub fn zeros_like(params: &ParamStore) -> Self {
        Self {
            grads: params
                .values
                .iter()
                .map(|v| Matrix::zeros(v.raw_dim()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.grads[id.0]
    }

    pub fn add_assign(&mut self, other: &GradStore) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.grads {
            g.mapv_inplace(|x| x * factor);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.grads.iter().enumerate().map(|(i, g)| (ParamId(i), g))
    }
}

#[derive(Debug)]
struct LstmCache {
    /// Post-activation gates per step, laid out `[i | f | g | o]`.
    gates: Matrix,
    cells: Matrix,
    hidden: Matrix,
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    MaskedSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Matrix,
        inv_std: Vec<f64>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Transpose(Var),
    RowMask(Var, Vec<bool>),
    Gather(Var, Vec<usize>),
    Unfold3(Var),
    MaxPoolRows(Var, Vec<usize>),
    MeanRows(Var),
    ReverseRows(Var),
    Sum(Var),
    Lstm {
        x: Var,
        w_input: Var,
        w_hidden: Var,
        bias: Var,
        cache: LstmCache,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        label: usize,
        probs: Matrix,
    },
}

#[derive(Debug)]
enum Value {
    Owned(Matrix),
    Param(ParamId),
}

#[derive(Debug)]
struct Node {
    value: Value,
    op: Op,
    needs_grad: bool,
}

/// One recorded forward computation.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(512),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        match &self.nodes[v.0].value {
            Value::Owned(m) => m,
            Value::Param(id) => self.params.get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    fn push(&mut self, value: Matrix, op: Op, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op: Op::Input,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    /// `a * b^T`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(&self.value(b).t());
        self.push(out, Op::MatMulBt(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.nrows(), 1, "add_row expects a single row");
        let out = self.value(a) + r;
        self.push(out, Op::AddRow(a, row), &[a, row])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a) * factor;
        self.push(out, Op::Scale(a, factor), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0));
        self.push(out, Op::Relu(a), &[a])
    }

    /// Row-wise softmax restricted to `mask == true` entries. Masked entries
    /// come out as exactly zero; a row with nothing allowed is all zero.
    pub fn masked_softmax(&mut self, a: Var, mask: Option<ArrayView2<bool>>) -> Var {
        let out = masked_softmax_rows(self.value(a).view(), mask);
        self.push(out, Op::MaskedSoftmax(a), &[a])
    }

    /// Row-wise layer normalization with learned `1 x n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.dim();
        let mut normed = Matrix::zeros((rows, cols));
        let mut inv_std = Vec::with_capacity(rows);
        for (r, mut out) in xv.outer_iter().zip(normed.outer_iter_mut()) {
            let mean = r.sum() / cols as f64;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            Zip::from(&mut out).and(&r).for_each(|o, &v| *o = (v - mean) * is);
        }
        let out = &normed * self.value(gain) + self.value(bias);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
            &[x, gain, bias],
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let out = concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        self.push(out, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let out = concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(out, Op::SliceRows(a, start), &[a])
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(out, Op::SliceCols(a, start), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        self.push(out, Op::Transpose(a), &[a])
    }

    /// Zeroes every row whose flag is false.
    pub fn row_mask(&mut self, a: Var, keep: &[bool]) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(out.nrows(), keep.len(), "row_mask length mismatch");
        for (mut row, &k) in out.outer_iter_mut().zip(keep) {
            if !k {
                row.fill(0.0);
            }
        }
        self.push(out, Op::RowMask(a, keep.to_vec()), &[a])
    }

    /// Selects rows of `table` by index (embedding lookup).
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Matrix::zeros((ids.len(), t.ncols()));
        for (mut row, &id) in out.outer_iter_mut().zip(ids) {
            row.assign(&t.row(id));
        }
        self.push(out, Op::Gather(table, ids.to_vec()), &[table])
    }

    /// Row `t` of the output is `[a[t-1] | a[t] | a[t+1]]` with zero rows outside
    /// the sequence: the im2col layout of a kernel-3 stride-1 padding-1 convolution.
    pub fn unfold3(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (rows, cols) = av.dim();
        let mut out = Matrix::zeros((rows, 3 * cols));
        if rows > 1 {
            out.slice_mut(s![1.., 0..cols])
                .assign(&av.slice(s![..rows - 1, ..]));
            out.slice_mut(s![..rows - 1, 2 * cols..])
                .assign(&av.slice(s![1.., ..]));
        }
        out.slice_mut(s![.., cols..2 * cols]).assign(av);
        self.push(out, Op::Unfold3(a), &[a])
    }

    /// Column-wise max over the rows flagged true. Panics when no row is flagged.
    pub fn max_pool_rows(&mut self, a: Var, keep: &[bool]) -> Var {
        let av = self.value(a);
        let (rows, cols) = av.dim();
        assert_eq!(rows, keep.len(), "max_pool_rows mask length mismatch");
        assert!(keep.iter().any(|&k| k), "max_pool_rows over an empty row set");
        let mut out = Matrix::from_elem((1, cols), f64::NEG_INFINITY);
        let mut arg = vec![0usize; cols];
        for (r, row) in av.outer_iter().enumerate() {
            if !keep[r] {
                continue;
            }
            for (c, &v) in row.iter().enumerate() {
                if v > out[[0, c]] {
                    out[[0, c]] = v;
                    arg[c] = r;
                }
            }
        }
        self.push(out, Op::MaxPoolRows(a, arg), &[a])
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .mean_axis(Axis(0))
            .expect("mean_rows over zero rows")
            .insert_axis(Axis(0));
        self.push(out, Op::MeanRows(a), &[a])
    }

    pub fn reverse_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).slice(s![..;-1, ..]).to_owned();
        self.push(out, Op::ReverseRows(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::from_elem((1, 1), self.value(a).sum());
        self.push(out, Op::Sum(a), &[a])
    }

    /// Standard gated recurrence (input, forget, cell, output gates) over the
    /// rows of `x`, starting from zero state. Returns the per-step cell states.
    pub fn lstm_cells(&mut self, x: Var, w_input: Var, w_hidden: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let wi = self.value(w_input);
        let wh = self.value(w_hidden);
        let b = self.value(bias);
        let hidden_size = wh.nrows();
        assert_eq!(wi.ncols(), 4 * hidden_size, "lstm input weight width");
        let steps = xv.nrows();
        let mut gates = Matrix::zeros((steps, 4 * hidden_size));
        let mut cells = Matrix::zeros((steps, hidden_size));
        let mut hidden = Matrix::zeros((steps, hidden_size));
        let projected = xv.dot(wi) + b;
        let mut h_prev = ndarray::Array1::<f64>::zeros(hidden_size);
        let mut c_prev = ndarray::Array1::<f64>::zeros(hidden_size);
        for t in 0..steps {
            let pre = &projected.row(t) + &h_prev.dot(wh);
            let mut g = gates.row_mut(t);
            for k in 0..hidden_size {
                let i = sigmoid(pre[k]);
                let f = sigmoid(pre[hidden_size + k]);
                let c_in = pre[2 * hidden_size + k].tanh();
                let o = sigmoid(pre[3 * hidden_size + k]);
                g[k] = i;
                g[hidden_size + k] = f;
                g[2 * hidden_size + k] = c_in;
                g[3 * hidden_size + k] = o;
                let c = f * c_prev[k] + i * c_in;
                cells[[t, k]] = c;
                hidden[[t, k]] = o * c.tanh();
            }
            h_prev = hidden.row(t).to_owned();
            c_prev = cells.row(t).to_owned();
        }
        let out = cells.clone();
        self.push(
            out,
            Op::Lstm {
                x,
                w_input,
                w_hidden,
                bias,
                cache: LstmCache {
                    gates,
                    cells,
                    hidden,
                },
            },
            &[x, w_input, w_hidden, bias],
        )
    }

    /// Cross-entropy of a `1 x C` logit row against a class index, as a `1 x 1` node.
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.nrows(), 1, "cross-entropy expects one logit row");
        assert!(label < lv.ncols(), "label out of range");
        let probs = masked_softmax_rows(lv.view(), None);
        let max = lv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + lv.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let out = Matrix::from_elem((1, 1), lse - lv[[0, label]]);
        self.push(
            out,
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            },
            &[logits],
        )
    }

    /// Back-propagates `seed * d(root)` and adds parameter gradients into `grads`.
    /// `root` must be `1 x 1`.
    pub fn backward(&self, root: Var, seed: f64, grads: &mut GradStore) {
        assert_eq!(self.shape(root), (1, 1), "backward root must be scalar");
        let mut adj: Vec<Option<Matrix>> = Vec::with_capacity(root.0 + 1);
        adj.resize_with(root.0 + 1, || None);
        adj[root.0] = Some(Matrix::from_elem((1, 1), seed));
        for idx in (0..=root.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.backprop_node(node, g, &mut adj, grads);
        }
    }

    fn backprop_node(
        &self,
        node: &Node,
        g: Matrix,
        adj: &mut [Option<Matrix>],
        grads: &mut GradStore,
    ) {
        let send = |v: Var, d: Matrix, adj: &mut [Option<Matrix>]| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut adj[v.0] {
                Some(acc) => *acc += &d,
                slot @ None => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Input => {}
            Op::Param(id) => grads.grads[id.0] += &g,
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                send(*a, g.dot(&bv.t()), adj);
                send(*b, av.t().dot(&g), adj);
            }
            Op::MatMulBt(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                send(*a, g.dot(bv), adj);
                send(*b, g.t().dot(av), adj);
            }
            Op::Add(a, b) => {
                send(*b, g.clone(), adj);
                send(*a, g, adj);
            }
            Op::AddRow(a, row) => {
                send(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)), adj);
                send(*a, g, adj);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                send(*a, &g * bv, adj);
                send(*b, &g * av, adj);
            }
            Op::Scale(a, f) => send(*a, g * *f, adj),
            Op::Relu(a) => {
                let mut d = g;
                Zip::from(&mut d)
                    .and(self.value(*a))
                    .for_each(|d, &x| {
                        if x <= 0.0 {
                            *d = 0.0
                        }
                    });
                send(*a, d, adj);
            }
            Op::MaskedSoftmax(a) => {
                let y = match &node.value {
                    Value::Owned(m) => m,
                    Value::Param(_) => unreachable!(),
                };
                let mut d = Matrix::zeros(y.raw_dim());
                for ((yr, gr), mut dr) in y.outer_iter().zip(g.outer_iter()).zip(d.outer_iter_mut())
                {
                    let dot: f64 = yr.iter().zip(gr.iter()).map(|(a, b)| a * b).sum();
                    Zip::from(&mut dr)
                        .and(&yr)
                        .and(&gr)
                        .for_each(|d, &y, &g| *d = y * (g - dot));
                }
                send(*a, d, adj);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            } => {
                let gv = self.value(*gain);
                send(*bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)), adj);
                send(
                    *gain,
                    (&g * normed).sum_axis(Axis(0)).insert_axis(Axis(0)),
                    adj,
                );
                let dn = &g * gv;
                let n = dn.ncols() as f64;
                let mut dx = Matrix::zeros(dn.raw_dim());
                for (r, mut out) in dx.outer_iter_mut().enumerate() {
                    let dnr = dn.row(r);
                    let nr = normed.row(r);
                    let mean_d = dnr.sum() / n;
                    let mean_dn: f64 = dnr.iter().zip(nr.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
                    for c in 0..out.len() {
                        out[c] = inv_std[r] * (dnr[c] - mean_d - nr[c] * mean_dn);
                    }
                }
                send(*x, dx, adj);
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for p in parts {
                    let rows = self.value(*p).nrows();
                    send(*p, g.slice(s![start..start + rows, ..]).to_owned(), adj);
                    start += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let cols = self.value(*p).ncols();
                    send(*p, g.slice(s![.., start..start + cols]).to_owned(), adj);
                    start += cols;
                }
            }
            Op::SliceRows(a, start) => {
                let mut d = Matrix::zeros(self.value(*a).raw_dim());
                d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                send(*a, d, adj);
            }
            Op::SliceCols(a, start) => {
                let mut d = Matrix::zeros(self.value(*a).raw_dim());
                d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                send(*a, d, adj);
            }
            Op::Transpose(a) => send(*a, g.t().to_owned(), adj),
            Op::RowMask(a, keep) => {
                let mut d = g;
                for (mut row, &k) in d.outer_iter_mut().zip(keep) {
                    if !k {
                        row.fill(0.0);
                    }
                }
                send(*a, d, adj);
            }
            Op::Gather(table, ids) => {
                let mut d = Matrix::zeros(self.value(*table).raw_dim());
                for (row, &id) in g.outer_iter().zip(ids) {
                    let mut target = d.row_mut(id);
                    target += &row;
                }
                send(*table, d, adj);
            }
            Op::Unfold3(a) => {
                let (rows, cols) = self.value(*a).dim();
                let mut d = g.slice(s![.., cols..2 * cols]).to_owned();
                if rows > 1 {
                    let mut upper = d.slice_mut(s![..rows - 1, ..]);
                    upper += &g.slice(s![1.., 0..cols]);
                    let mut lower = d.slice_mut(s![1.., ..]);
                    lower += &g.slice(s![..rows - 1, 2 * cols..]);
                }
                send(*a, d, adj);
            }
            Op::MaxPoolRows(a, arg) => {
                let mut d = Matrix::zeros(self.value(*a).raw_dim());
                for (c, &r) in arg.iter().enumerate() {
                    d[[r, c]] += g[[0, c]];
                }
                send(*a, d, adj);
            }
            Op::MeanRows(a) => {
                let rows = self.value(*a).nrows();
                let row = g.row(0).mapv(|v| v / rows as f64);
                let d = row
                    .broadcast((rows, row.len()))
                    .expect("broadcast mean gradient")
                    .to_owned();
                send(*a, d, adj);
            }
            Op::ReverseRows(a) => send(*a, g.slice(s![..;-1, ..]).to_owned(), adj),
            Op::Sum(a) => {
                let d = Matrix::from_elem(self.value(*a).raw_dim(), g[[0, 0]]);
                send(*a, d, adj);
            }
            Op::Lstm {
                x,
                w_input,
                w_hidden,
                bias,
                cache,
            } => {
                let (dx, dwi, dwh, db) = self.lstm_backward(
                    self.value(*x),
                    self.value(*w_input),
                    self.value(*w_hidden),
                    cache,
                    &g,
                );
                send(*x, dx, adj);
                send(*w_input, dwi, adj);
                send(*w_hidden, dwh, adj);
                send(*bias, db, adj);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            } => {
                let mut d = probs.clone();
                d[[0, *label]] -= 1.0;
                send(*logits, d * g[[0, 0]], adj);
            }
        }
    }

    fn lstm_backward(
        &self,
        x: &Matrix,
        wi: &Matrix,
        wh: &Matrix,
        cache: &LstmCache,
        d_cells: &Matrix,
    ) -> (Matrix, Matrix, Matrix, Matrix) {
        let hs = wh.nrows();
        let steps = x.nrows();
        let mut d_pre = Matrix::zeros((steps, 4 * hs));
        let mut dh_next = ndarray::Array1::<f64>::zeros(hs);
        let mut dc_next = ndarray::Array1::<f64>::zeros(hs);
        for t in (0..steps).rev() {
            let gates = cache.gates.row(t);
            let mut dh = dh_next.clone();
            let mut dpre = d_pre.row_mut(t);
            let mut dc_carry = ndarray::Array1::<f64>::zeros(hs);
            for k in 0..hs {
                let (i, f, c_in, o) = (
                    gates[k],
                    gates[hs + k],
                    gates[2 * hs + k],
                    gates[3 * hs + k],
                );
                let c = cache.cells[[t, k]];
                let tc = c.tanh();
                let c_prev = if t > 0 { cache.cells[[t - 1, k]] } else { 0.0 };
                let d_o = dh[k] * tc;
                let dc = d_cells[[t, k]] + dc_next[k] + dh[k] * o * (1.0 - tc * tc);
                let d_i = dc * c_in;
                let d_cin = dc * i;
                let d_f = dc * c_prev;
                dc_carry[k] = dc * f;
                dpre[k] = d_i * i * (1.0 - i);
                dpre[hs + k] = d_f * f * (1.0 - f);
                dpre[2 * hs + k] = d_cin * (1.0 - c_in * c_in);
                dpre[3 * hs + k] = d_o * o * (1.0 - o);
            }
            dh = dpre.dot(&wh.t());
            dh_next = dh;
            dc_next = dc_carry;
        }
        let mut h_prev = Matrix::zeros((steps, hs));
        if steps > 1 {
            h_prev
                .slice_mut(s![1.., ..])
                .assign(&cache.hidden.slice(s![..steps - 1, ..]));
        }
        let dx = d_pre.dot(&wi.t());
        let dwi = x.t().dot(&d_pre);
        let dwh = h_prev.t().dot(&d_pre);
        let db = d_pre.sum_axis(Axis(0)).insert_axis(Axis(0));
        (dx, dwi, dwh, db)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable masked softmax over rows; shared by the graph op and by
/// inference-only callers.
pub fn masked_softmax_rows(a: ArrayView2<f64>, mask: Option<ArrayView2<bool>>) -> Matrix {
    let mut out = Matrix::zeros(a.raw_dim());
    for (r, (row, mut o)) in a.outer_iter().zip(out.outer_iter_mut()).enumerate() {
        let allowed = |c: usize| mask.as_ref().is_none_or(|m| m[[r, c]]);
        let max = row
            .iter()
            .enumerate()
            .filter(|(c, _)| allowed(*c))
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            continue;
        }
        let mut total = 0.0;
        for (c, &v) in row.iter().enumerate() {
            if allowed(c) {
                let e = (v - max).exp();
                o[c] = e;
                total += e;
            }
        }
        o.mapv_inplace(|v| v / total);
    }
    out
}
