use std::borrow::Cow;
use std::rc::Rc;

use super::incidence::Incidence;
use super::params::{Gradients, ParamId, ParameterStore};
use super::tensor::Tensor;
use super::AutodiffError;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    AddCol(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    LeakyRelu(Var, f64),
    Square(Var),
    SoftmaxRows(Var),
    SumAll(Var),
    MeanAll(Var),
    Reduce {
        input: Var,
        axis: usize,
        mean: bool,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        input: Var,
        start: usize,
    },
    GatherCols {
        input: Var,
        index: Vec<usize>,
    },
    SumRowGroups {
        input: Var,
        groups: Vec<usize>,
    },
    RelationalAggregate {
        bases: Vec<Var>,
        coeffs: Var,
        incidence: Rc<Incidence>,
    },
    GraphAttention {
        features: Var,
        src_score: Var,
        dst_score: Var,
        incidence: Rc<Incidence>,
        slope: f64,
        alpha: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::AddCol(..) => "add_col",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Square(..) => "square",
            Op::SoftmaxRows(..) => "softmax",
            Op::SumAll(..) => "sum",
            Op::MeanAll(..) => "mean",
            Op::Reduce { .. } => "reduce_axis",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols { .. } => "slice_cols",
            Op::GatherCols { .. } => "gather_cols",
            Op::SumRowGroups { .. } => "sum_row_groups",
            Op::RelationalAggregate { .. } => "relational_aggregate",
            Op::GraphAttention { .. } => "graph_attention",
        }
    }
}

struct Node<'s> {
    value: Cow<'s, Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Parameters of one [`ParameterStore`] registered as leaves of a tape.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.index()]
    }
}

/// Computation record for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so reverse index order is a valid
/// reverse topological order. Parameter leaves borrow from their store.
pub struct Tape<'s> {
    nodes: Vec<Node<'s>>,
    grads: Vec<Option<Vec<f64>>>,
    bound: Option<(usize, Vec<Var>)>,
    backward_done: bool,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

fn accumulate(nodes: &[Node<'_>], grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
    if !nodes[v.0].needs_grad {
        return;
    }
    let len = nodes[v.0].value.len();
    f(grads[v.0].get_or_insert_with(|| vec![0.0; len]));
}

fn leaky_deriv(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `c (+)= a · b` for row-major operands addressed through explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slice lengths checked above cover every index reachable through
    // the given extents and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl<'s> Tape<'s> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            bound: None,
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'s, Tensor>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push(Cow::Owned(value), op, needs_grad)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    /// A leaf whose gradient is tracked.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, true)
    }

    /// Registers every parameter of `store` as a borrowed leaf. With
    /// `track = false` the parameters behave as constants (e.g. a frozen target
    /// network). Only one store may be tracked per tape.
    pub fn bind(&mut self, store: &'s ParameterStore, track: bool) -> BoundParams {
        let vars: Vec<Var> = store
            .tensors()
            .iter()
            .map(|t| self.push(Cow::Borrowed(t), Op::Leaf, track))
            .collect();
        if track {
            assert!(self.bound.is_none(), "a tape tracks gradients for at most one store");
            self.bound = Some((store.len(), vars.clone()));
        }
        BoundParams { vars }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn shape_err(&self, op: &'static str, vars: &[Var]) -> AutodiffError {
        AutodiffError::ShapeMismatch {
            op,
            shapes: vars.iter().map(|v| self.value(*v).shape().to_vec()).collect(),
        }
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.value(v).dims2()
    }

    /// Matrix product. A rank-1 right operand is a column vector and a rank-1
    /// left operand is a row vector; either yields a rank-1 result.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.dims2();
        let (kb, n, out_shape) = match (ta.shape().len(), tb.shape()) {
            (_, [len]) => (*len, 1, vec![m]),
            (1, [r, c]) => (*r, *c, vec![*c]),
            (_, [r, c]) => (*r, *c, vec![m, *c]),
            _ => return Err(self.shape_err("matmul", &[a, b])),
        };
        if k != kb || ta.shape().len() > 2 {
            return Err(self.shape_err("matmul", &[a, b]));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            ta.values(),
            (k as isize, 1),
            tb.values(),
            (n as isize, 1),
            &mut out,
            false,
        );
        let value = Tensor::new(out_shape, out)?;
        Ok(self.derived(value, Op::MatMul(a, b), &[a, b]))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(self.shape_err(name, &[a, b]));
        }
        let values = ta.values().iter().zip(tb.values()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), values)?;
        Ok(self.derived(value, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_same(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Broadcasts a length-`n` vector over every row of an `[m, n]` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        let (m, n) = self.dims(a);
        if self.value(row).len() != n {
            return Err(self.shape_err("add_row", &[a, row]));
        }
        let (ta, tb) = (self.value(a), self.value(row));
        let mut values = ta.values().to_vec();
        for r in 0..m {
            for (x, &y) in values[r * n..(r + 1) * n].iter_mut().zip(tb.values()) {
                *x += y;
            }
        }
        let value = Tensor::new(ta.shape().to_vec(), values)?;
        Ok(self.derived(value, Op::AddRow(a, row), &[a, row]))
    }

    /// Broadcasts an `[m, 1]` column over every column of an `[m, n]` matrix.
    pub fn add_col(&mut self, a: Var, col: Var) -> Result<Var, AutodiffError> {
        let (m, n) = self.dims(a);
        if self.value(col).len() != m {
            return Err(self.shape_err("add_col", &[a, col]));
        }
        let (ta, tb) = (self.value(a), self.value(col));
        let mut values = ta.values().to_vec();
        for r in 0..m {
            let y = tb.values()[r];
            for x in &mut values[r * n..(r + 1) * n] {
                *x += y;
            }
        }
        let value = Tensor::new(ta.shape().to_vec(), values)?;
        Ok(self.derived(value, Op::AddCol(a, col), &[a, col]))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let ta = self.value(a);
        let values = ta.values().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(ta.shape().to_vec(), values).unwrap();
        self.derived(value, op, &[a])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.map(a, |x| x * factor, Op::Scale(a, factor))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.map(a, |x| leaky(x, slope), Op::LeakyRelu(a, slope))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, |x| x * x, Op::Square(a))
    }

    /// Row-wise softmax of an `[m, n]` matrix.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let (m, n) = ta.dims2();
        let mut values = ta.values().to_vec();
        for r in 0..m {
            let row = &mut values[r * n..(r + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        let value = Tensor::new(ta.shape().to_vec(), values).unwrap();
        self.derived(value, Op::SoftmaxRows(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).values().iter().sum();
        self.derived(Tensor::scalar(total), Op::SumAll(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mean = t.values().iter().sum::<f64>() / t.len() as f64;
        self.derived(Tensor::scalar(mean), Op::MeanAll(a), &[a])
    }

    /// Sum (or mean) over `axis` of an `[m, n]` matrix, keeping the reduced
    /// axis with extent 1.
    pub fn reduce_axis(&mut self, a: Var, axis: usize, mean: bool) -> Result<Var, AutodiffError> {
        let (m, n) = self.dims(a);
        let t = self.value(a);
        let value = match axis {
            0 => {
                let mut out = vec![0.0; n];
                for r in 0..m {
                    for (o, &x) in out.iter_mut().zip(t.row(r)) {
                        *o += x;
                    }
                }
                if mean {
                    out.iter_mut().for_each(|o| *o /= m as f64);
                }
                Tensor::new(vec![1, n], out)?
            }
            1 => {
                let div = if mean { n as f64 } else { 1.0 };
                let out = (0..m).map(|r| t.row(r).iter().sum::<f64>() / div).collect();
                Tensor::new(vec![m, 1], out)?
            }
            _ => return Err(self.shape_err("reduce_axis", &[a])),
        };
        Ok(self.derived(value, Op::Reduce { input: a, axis, mean }, &[a]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let Some(&first) = parts.first() else {
            return Err(AutodiffError::ShapeMismatch {
                op: "concat_cols",
                shapes: Vec::new(),
            });
        };
        let m = self.dims(first).0;
        if parts.iter().any(|&p| self.dims(p).0 != m) {
            return Err(self.shape_err("concat_cols", parts));
        }
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut values = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                values.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::new(vec![m, total], values)?;
        Ok(self.derived(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Columns `start..end` of an `[m, n]` matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, AutodiffError> {
        let (m, n) = self.dims(a);
        if start >= end || end > n {
            return Err(self.shape_err("slice_cols", &[a]));
        }
        let t = self.value(a);
        let mut values = Vec::with_capacity(m * (end - start));
        for r in 0..m {
            values.extend_from_slice(&t.row(r)[start..end]);
        }
        let value = Tensor::new(vec![m, end - start], values)?;
        Ok(self.derived(value, Op::SliceCols { input: a, start }, &[a]))
    }

    /// Picks column `index[r]` of each row `r`, producing `[m, 1]`.
    pub fn gather_cols(&mut self, a: Var, index: Vec<usize>) -> Result<Var, AutodiffError> {
        let (m, n) = self.dims(a);
        if index.len() != m || index.iter().any(|&c| c >= n) {
            return Err(self.shape_err("gather_cols", &[a]));
        }
        let t = self.value(a);
        let values = index.iter().enumerate().map(|(r, &c)| t.at(r, c)).collect();
        let value = Tensor::new(vec![m, 1], values)?;
        Ok(self.derived(value, Op::GatherCols { input: a, index }, &[a]))
    }

    /// Sums rows sharing a group id: row `r` is added into output row `groups[r]`.
    pub fn sum_row_groups(&mut self, a: Var, groups: Vec<usize>, num_groups: usize) -> Result<Var, AutodiffError> {
        let (m, n) = self.dims(a);
        if groups.len() != m || groups.iter().any(|&g| g >= num_groups) || num_groups == 0 {
            return Err(self.shape_err("sum_row_groups", &[a]));
        }
        let t = self.value(a);
        let mut values = vec![0.0; num_groups * n];
        for (r, &g) in groups.iter().enumerate() {
            for (o, &x) in values[g * n..(g + 1) * n].iter_mut().zip(t.row(r)) {
                *o += x;
            }
        }
        let value = Tensor::new(vec![num_groups, n], values)?;
        Ok(self.derived(value, Op::SumRowGroups { input: a, groups }, &[a]))
    }

    /// Relation-weighted neighbor aggregation with basis-decomposed relation
    /// maps: `out_i = Σ_{(j, r, w) → i} w · Σ_b coeffs[r, b] · bases[b]_j`.
    ///
    /// `bases[b]` holds every node's features already projected by basis `b`,
    /// and `coeffs` is `[num_relations, num_bases]`.
    pub fn relational_aggregate(
        &mut self,
        bases: &[Var],
        coeffs: Var,
        incidence: Rc<Incidence>,
    ) -> Result<Var, AutodiffError> {
        let num_bases = bases.len();
        let mut all: Vec<Var> = bases.to_vec();
        all.push(coeffs);
        let Some(&first) = bases.first() else {
            return Err(self.shape_err("relational_aggregate", &all));
        };
        let (n, d) = self.dims(first);
        if n != incidence.num_nodes()
            || bases.iter().any(|&b| self.dims(b) != (n, d))
            || self.value(coeffs).shape() != [incidence.num_relations(), num_bases]
        {
            return Err(self.shape_err("relational_aggregate", &all));
        }
        let coeff = self.value(coeffs).values();
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let row = &mut out[i * d..(i + 1) * d];
            for (j, r, w) in incidence.incoming(i) {
                for (b, &basis) in bases.iter().enumerate() {
                    let scale = w * coeff[r * num_bases + b];
                    for (o, &x) in row.iter_mut().zip(self.value(basis).row(j)) {
                        *o += scale * x;
                    }
                }
            }
        }
        let value = Tensor::new(vec![n, d], out)?;
        Ok(self.derived(
            value,
            Op::RelationalAggregate {
                bases: bases.to_vec(),
                coeffs,
                incidence,
            },
            &all,
        ))
    }

    /// Single-head graph attention over each node's incoming neighbors plus
    /// itself. Logits are `leaky(dst_score_i + src_score_j)`, softmax-normalized
    /// per target; output rows are the attention-weighted `features` rows.
    pub fn graph_attention(
        &mut self,
        features: Var,
        src_score: Var,
        dst_score: Var,
        incidence: Rc<Incidence>,
        slope: f64,
    ) -> Result<Var, AutodiffError> {
        let (n, d) = self.dims(features);
        if n != incidence.num_nodes() || self.value(src_score).len() != n || self.value(dst_score).len() != n {
            return Err(self.shape_err("graph_attention", &[features, src_score, dst_score]));
        }
        let alpha = attention_weights(self.value(src_score).values(), self.value(dst_score).values(), &incidence, slope);
        let z = self.value(features);
        let mut out = vec![0.0; n * d];
        let mut cursor = 0;
        for i in 0..n {
            let row = &mut out[i * d..(i + 1) * d];
            for j in std::iter::once(i).chain(incidence.incoming(i).map(|e| e.0)) {
                let a = alpha[cursor];
                cursor += 1;
                for (o, &x) in row.iter_mut().zip(z.row(j)) {
                    *o += a * x;
                }
            }
        }
        let value = Tensor::new(vec![n, d], out)?;
        Ok(self.derived(
            value,
            Op::GraphAttention {
                features,
                src_score,
                dst_score,
                incidence,
                slope,
                alpha,
            },
            &[features, src_score, dst_score],
        ))
    }

    /// Attention coefficients recorded by a [`Tape::graph_attention`] node, laid
    /// out per target as `[self, incoming...]`.
    pub fn attention_of(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::GraphAttention { alpha, .. } => Some(alpha),
            _ => None,
        }
    }

    /// Smallest distance of any leaky-ReLU input or attention logit on the
    /// tape from its kink at zero; `f64::INFINITY` when there is none.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::LeakyRelu(a, _) => {
                    for x in self.value(*a).values() {
                        margin = margin.min(x.abs());
                    }
                }
                Op::GraphAttention {
                    src_score,
                    dst_score,
                    incidence,
                    ..
                } => {
                    let (src, dst) = (self.value(*src_score).values(), self.value(*dst_score).values());
                    for i in 0..incidence.num_nodes() {
                        for j in std::iter::once(i).chain(incidence.incoming(i).map(|e| e.0)) {
                            margin = margin.min((dst[i] + src[j]).abs());
                        }
                    }
                }
                _ => {}
            }
        }
        margin
    }

    /// Reverse sweep from a scalar `loss`. May be run once per tape.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        if self.backward_done {
            return Err(AutodiffError::BackwardTwice);
        }
        if self.value(loss).len() != 1 {
            return Err(AutodiffError::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        self.backward_done = true;
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(upstream) = self.grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &upstream);
            self.grads[idx] = Some(upstream);
        }
        Ok(())
    }

    fn propagate(&mut self, idx: usize, g: &[f64]) {
        let (nodes, grads) = (&self.nodes, &mut self.grads);
        let value = |v: Var| -> &Tensor { &nodes[v.0].value };
        let dims = |v: Var| value(v).dims2();
        let needs_grad = |v: Var| nodes[v.0].needs_grad;
        match &nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let (m, k) = dims(a);
                let n = value(b).len() / k;
                if needs_grad(a) {
                    let bv = value(b).values();
                    accumulate(nodes, grads, a, |ga| gemm(m, n, k, g, (n as isize, 1), bv, (1, n as isize), ga, true));
                }
                if needs_grad(b) {
                    let av = value(a).values();
                    accumulate(nodes, grads, b, |gb| gemm(k, m, n, av, (1, k as isize), g, (n as isize, 1), gb, true));
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    accumulate(nodes, grads, v, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                }
            }
            Op::Sub(a, b) => {
                accumulate(nodes, grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                accumulate(nodes, grads, *b, |gb| gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let bv = value(b).values();
                accumulate(nodes, grads, a, |ga| ga.iter_mut().zip(g.iter().zip(bv)).for_each(|(x, (y, z))| *x += y * z));
                let av = value(a).values();
                accumulate(nodes, grads, b, |gb| gb.iter_mut().zip(g.iter().zip(av)).for_each(|(x, (y, z))| *x += y * z));
            }
            Op::AddRow(a, row) => {
                let n = value(*row).len();
                accumulate(nodes, grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                accumulate(nodes, grads, *row, |gr| {
                    for chunk in g.chunks(n) {
                        gr.iter_mut().zip(chunk).for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::AddCol(a, col) => {
                let n = dims(*a).1;
                accumulate(nodes, grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                accumulate(nodes, grads, *col, |gc| {
                    for (x, chunk) in gc.iter_mut().zip(g.chunks(n)) {
                        *x += chunk.iter().sum::<f64>();
                    }
                });
            }
            Op::Scale(a, f) => {
                let f = *f;
                accumulate(nodes, grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += f * y));
            }
            Op::Tanh(a) => {
                let out = nodes[idx].value.values();
                accumulate(nodes, grads, *a, |ga| {
                    for ((x, y), o) in ga.iter_mut().zip(g).zip(out) {
                        *x += y * (1.0 - o * o);
                    }
                });
            }
            Op::Sigmoid(a) => {
                let out = nodes[idx].value.values();
                accumulate(nodes, grads, *a, |ga| {
                    for ((x, y), o) in ga.iter_mut().zip(g).zip(out) {
                        *x += y * o * (1.0 - o);
                    }
                });
            }
            Op::LeakyRelu(a, slope) => {
                let (a, slope) = (*a, *slope);
                let input = value(a).values();
                accumulate(nodes, grads, a, |ga| {
                    for ((x, y), i) in ga.iter_mut().zip(g).zip(input) {
                        *x += y * leaky_deriv(*i, slope);
                    }
                });
            }
            Op::Square(a) => {
                let input = value(*a).values();
                accumulate(nodes, grads, *a, |ga| {
                    for ((x, y), i) in ga.iter_mut().zip(g).zip(input) {
                        *x += 2.0 * y * i;
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let (_, n) = dims(*a);
                let out = nodes[idx].value.values();
                accumulate(nodes, grads, *a, |ga| {
                    for ((gx, gy), o) in ga.chunks_mut(n).zip(g.chunks(n)).zip(out.chunks(n)) {
                        let dot: f64 = gy.iter().zip(o).map(|(y, p)| y * p).sum();
                        for ((x, y), p) in gx.iter_mut().zip(gy).zip(o) {
                            *x += p * (y - dot);
                        }
                    }
                });
            }
            Op::SumAll(a) => {
                let y = g[0];
                accumulate(nodes, grads, *a, |ga| ga.iter_mut().for_each(|x| *x += y));
            }
            Op::MeanAll(a) => {
                let y = g[0] / value(*a).len() as f64;
                accumulate(nodes, grads, *a, |ga| ga.iter_mut().for_each(|x| *x += y));
            }
            Op::Reduce { input, axis, mean } => {
                let (m, n) = dims(*input);
                let axis = *axis;
                let div = match (mean, axis) {
                    (false, _) => 1.0,
                    (true, 0) => m as f64,
                    (true, _) => n as f64,
                };
                accumulate(nodes, grads, *input, |ga| {
                    for r in 0..m {
                        for c in 0..n {
                            let up = if axis == 0 { g[c] } else { g[r] };
                            ga[r * n + c] += up / div;
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = dims(Var(idx)).1;
                let mut offset = 0;
                for &p in parts {
                    let (m, w) = dims(p);
                    accumulate(nodes, grads, p, |gp| {
                        for r in 0..m {
                            for c in 0..w {
                                gp[r * w + c] += g[r * total + offset + c];
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceCols { input, start } => {
                let (m, n) = dims(*input);
                let w = dims(Var(idx)).1;
                let start = *start;
                accumulate(nodes, grads, *input, |ga| {
                    for r in 0..m {
                        for c in 0..w {
                            ga[r * n + start + c] += g[r * w + c];
                        }
                    }
                });
            }
            Op::GatherCols { input, index } => {
                let n = dims(*input).1;
                accumulate(nodes, grads, *input, |ga| {
                    for (r, &c) in index.iter().enumerate() {
                        ga[r * n + c] += g[r];
                    }
                });
            }
            Op::SumRowGroups { input, groups } => {
                let n = dims(*input).1;
                accumulate(nodes, grads, *input, |ga| {
                    for (r, &grp) in groups.iter().enumerate() {
                        for c in 0..n {
                            ga[r * n + c] += g[grp * n + c];
                        }
                    }
                });
            }
            Op::RelationalAggregate {
                bases,
                coeffs,
                incidence,
            } => {
                let num_bases = bases.len();
                let (n, d) = dims(bases[0]);
                let coeff = value(*coeffs).values();
                for (b, &basis) in bases.iter().enumerate() {
                    accumulate(nodes, grads, basis, |gb| {
                        for i in 0..n {
                            let up = &g[i * d..(i + 1) * d];
                            for (j, r, w) in incidence.incoming(i) {
                                let scale = w * coeff[r * num_bases + b];
                                for (x, y) in gb[j * d..(j + 1) * d].iter_mut().zip(up) {
                                    *x += scale * y;
                                }
                            }
                        }
                    });
                }
                if needs_grad(*coeffs) {
                    let mut gc = vec![0.0; coeff.len()];
                    for (b, &basis) in bases.iter().enumerate() {
                        let hb = value(basis);
                        for i in 0..n {
                            let up = &g[i * d..(i + 1) * d];
                            for (j, r, w) in incidence.incoming(i) {
                                let dot: f64 = up.iter().zip(hb.row(j)).map(|(x, y)| x * y).sum();
                                gc[r * num_bases + b] += w * dot;
                            }
                        }
                    }
                    accumulate(nodes, grads, *coeffs, |x| x.iter_mut().zip(&gc).for_each(|(a, b)| *a += b));
                }
            }
            Op::GraphAttention {
                features,
                src_score,
                dst_score,
                incidence,
                slope,
                alpha,
            } => {
                let (n, d) = dims(*features);
                let src = value(*src_score).values();
                let dst = value(*dst_score).values();
                let z = value(*features).values();
                let mut gz = vec![0.0; n * d];
                let mut gsrc = vec![0.0; n];
                let mut gdst = vec![0.0; n];
                let mut cursor = 0;
                for i in 0..n {
                    let up = &g[i * d..(i + 1) * d];
                    let members: Vec<usize> = std::iter::once(i).chain(incidence.incoming(i).map(|e| e.0)).collect();
                    let a = &alpha[cursor..cursor + members.len()];
                    cursor += members.len();
                    let dalpha: Vec<f64> = members
                        .iter()
                        .map(|&j| up.iter().zip(&z[j * d..(j + 1) * d]).map(|(x, y)| x * y).sum())
                        .collect();
                    let weighted: f64 = a.iter().zip(&dalpha).map(|(x, y)| x * y).sum();
                    for (k, &j) in members.iter().enumerate() {
                        for (x, y) in gz[j * d..(j + 1) * d].iter_mut().zip(up) {
                            *x += a[k] * y;
                        }
                        let dlogit = a[k] * (dalpha[k] - weighted) * leaky_deriv(dst[i] + src[j], *slope);
                        gdst[i] += dlogit;
                        gsrc[j] += dlogit;
                    }
                }
                accumulate(nodes, grads, *features, |x| x.iter_mut().zip(&gz).for_each(|(a, b)| *a += b));
                accumulate(nodes, grads, *src_score, |x| x.iter_mut().zip(&gsrc).for_each(|(a, b)| *a += b));
                accumulate(nodes, grads, *dst_score, |x| x.iter_mut().zip(&gdst).for_each(|(a, b)| *a += b));
            }
        }
    }

    /// Gradient of the last backward sweep with respect to `v`. `None` when
    /// `v` is not reachable from the loss or is not tracked.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of the tracked store, zero for unreachable parameters.
    pub fn parameter_gradients(&self) -> Result<Gradients, AutodiffError> {
        if !self.backward_done {
            return Err(AutodiffError::NoBackward);
        }
        let (_, vars) = self.bound.as_ref().ok_or(AutodiffError::NoTrackedStore)?;
        let grads = vars
            .iter()
            .map(|&v| match self.grad(v) {
                Some(g) => g.to_vec(),
                None => vec![0.0; self.value(v).len()],
            })
            .collect();
        Ok(Gradients::new(grads))
    }

    /// Name of the op that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }
}

/// Softmax attention coefficients over `[self, incoming...]` for each target.
pub fn attention_weights(src: &[f64], dst: &[f64], incidence: &Incidence, slope: f64) -> Vec<f64> {
    let mut alpha = Vec::with_capacity(incidence.num_nodes() + incidence.num_entries());
    for i in 0..incidence.num_nodes() {
        let start = alpha.len();
        for j in std::iter::once(i).chain(incidence.incoming(i).map(|e| e.0)) {
            alpha.push(leaky(dst[i] + src[j], slope));
        }
        let block = &mut alpha[start..];
        let max = block.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for x in block.iter_mut() {
            *x = (*x - max).exp();
            total += *x;
        }
        for x in block.iter_mut() {
            *x /= total;
        }
    }
    alpha
}
