use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Result, SparseMatrix, Tensor, TensorError};

/// Index of a trainable parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named trainable tensors, addressed by [`ParamId`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn total_len(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.index
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(usize, usize),
    SpMM(Arc<SparseMatrix>, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    SubRow(usize, usize),
    Relu(usize),
    Scale(usize, f64),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    GatherRows(usize, Vec<usize>),
    MeanRows(usize),
    Sum(usize),
    Mean(usize),
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Constant | Op::Param(_) => Vec::new(),
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::SubRow(a, b) => vec![*a, *b],
            Op::SpMM(_, a)
            | Op::Relu(a)
            | Op::Scale(a, _)
            | Op::GatherRows(a, _)
            | Op::MeanRows(a)
            | Op::Sum(a)
            | Op::Mean(a) => vec![*a],
            Op::ConcatCols(xs) | Op::ConcatRows(xs) => xs.clone(),
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Linear record of primitive operations in execution order.
///
/// Every node's inputs have smaller indices than the node itself, so the
/// reverse sweep in [`Tape::backward`] is a plain reverse iteration.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    params: HashMap<ParamId, usize>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn row_broadcast(op: &'static str, a: &Tensor, row: &Tensor, sign: f64) -> Result<Tensor> {
    if a.shape().len() != 2 || row.shape() != [1, a.cols()] {
        return Err(TensorError::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: row.shape().to_vec(),
        });
    }
    let mut out = a.clone();
    let r = row.data();
    for i in 0..out.rows() {
        for (o, &b) in out.row_mut(i).iter_mut().zip(r) {
            *o += sign * b;
        }
    }
    Ok(out)
}

fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or(TensorError::Empty("concat_cols"))?;
    let rows = first.rows();
    for p in parts {
        if p.shape().len() != 2 || p.rows() != rows {
            return Err(TensorError::ShapeMismatch {
                op: "concat_cols",
                left: first.shape().to_vec(),
                right: p.shape().to_vec(),
            });
        }
    }
    let cols: usize = parts.iter().map(|p| p.cols()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for p in parts {
            data.extend_from_slice(p.row(r));
        }
    }
    Tensor::matrix(rows, cols, data)
}

fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or(TensorError::Empty("concat_rows"))?;
    let cols = first.cols();
    for p in parts {
        if p.shape().len() != 2 || p.cols() != cols {
            return Err(TensorError::ShapeMismatch {
                op: "concat_rows",
                left: first.shape().to_vec(),
                right: p.shape().to_vec(),
            });
        }
    }
    let rows: usize = parts.iter().map(|p| p.rows()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for p in parts {
        data.extend_from_slice(p.data());
    }
    Tensor::matrix(rows, cols, data)
}

fn gather_rows(a: &Tensor, idx: &[usize]) -> Result<Tensor> {
    if a.shape().len() != 2 {
        return Err(TensorError::NotMatrix {
            op: "gather_rows",
            shape: a.shape().to_vec(),
        });
    }
    let mut data = Vec::with_capacity(idx.len() * a.cols());
    for &i in idx {
        if i >= a.rows() {
            return Err(TensorError::RowOutOfRange {
                index: i,
                rows: a.rows(),
            });
        }
        data.extend_from_slice(a.row(i));
    }
    Tensor::matrix(idx.len(), a.cols(), data)
}

fn mean_rows(a: &Tensor) -> Result<Tensor> {
    if a.shape().len() != 2 {
        return Err(TensorError::NotMatrix {
            op: "mean_rows",
            shape: a.shape().to_vec(),
        });
    }
    if a.rows() == 0 {
        return Err(TensorError::Empty("mean_rows"));
    }
    let n = a.rows() as f64;
    let mut out = vec![0.0; a.cols()];
    for r in 0..a.rows() {
        for (o, &v) in out.iter_mut().zip(a.row(r)) {
            *o += v;
        }
    }
    for o in &mut out {
        *o /= n;
    }
    Ok(Tensor::row_vector(out))
}

/// Forward kernel shared by recording and replay.
fn evaluate<'a>(op: &Op, value: impl Fn(usize) -> &'a Tensor) -> Result<Tensor> {
    match op {
        Op::Constant | Op::Param(_) => unreachable!("leaves are not evaluated"),
        Op::MatMul(a, b) => value(*a).matmul(value(*b)),
        Op::SpMM(s, a) => s.matmul(value(*a)),
        Op::Add(a, b) => value(*a).zip_with(value(*b), "add", |x, y| x + y),
        Op::Sub(a, b) => value(*a).zip_with(value(*b), "sub", |x, y| x - y),
        Op::Mul(a, b) => value(*a).zip_with(value(*b), "mul", |x, y| x * y),
        Op::AddRow(a, b) => row_broadcast("add_row", value(*a), value(*b), 1.0),
        Op::SubRow(a, b) => row_broadcast("sub_row", value(*a), value(*b), -1.0),
        Op::Relu(a) => Ok(value(*a).map(|x| if x > 0.0 { x } else { 0.0 })),
        Op::Scale(a, f) => Ok(value(*a).map(|x| x * f)),
        Op::ConcatCols(xs) => concat_cols(&xs.iter().map(|&i| value(i)).collect::<Vec<_>>()),
        Op::ConcatRows(xs) => concat_rows(&xs.iter().map(|&i| value(i)).collect::<Vec<_>>()),
        Op::GatherRows(a, idx) => gather_rows(value(*a), idx),
        Op::MeanRows(a) => mean_rows(value(*a)),
        Op::Sum(a) => Ok(Tensor::scalar(value(*a).sum())),
        Op::Mean(a) => {
            let t = value(*a);
            if t.numel() == 0 {
                return Err(TensorError::Empty("mean"));
            }
            Ok(Tensor::scalar(t.sum() / t.numel() as f64))
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(TensorError::ForeignVar(v.index));
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn record(&mut self, op: Op) -> Result<Var> {
        let value = evaluate(&op, |i| &self.nodes[i].value)?;
        let requires_grad = op.inputs().iter().any(|&i| self.nodes[i].requires_grad);
        Ok(self.push(value, op, requires_grad))
    }

    /// Value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Leaf bound to a stored parameter. Registering the same id twice
    /// returns the same variable.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&index) = self.params.get(&id) {
            return Var {
                tape: self.id,
                index,
            };
        }
        let v = self.push(store.get(id).clone(), Op::Param(id), true);
        self.params.insert(id, v.index);
        v
    }

    /// Parameter bound to a leaf, if any.
    pub fn param_id(&self, v: Var) -> Option<ParamId> {
        match self.nodes.get(v.index)?.op {
            Op::Param(id) if v.tape == self.id => Some(id),
            _ => None,
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.index].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        self.record(Op::MatMul(a, b))
    }

    /// Product of a constant sparse operator with a recorded value.
    pub fn spmm(&mut self, s: &Arc<SparseMatrix>, a: Var) -> Result<Var> {
        let a = self.check(a)?;
        self.record(Op::SpMM(Arc::clone(s), a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        self.record(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        self.record(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        self.record(Op::Mul(a, b))
    }

    /// Adds a `1 × k` row to every row of an `n × k` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (a, b) = (self.check(a)?, self.check(row)?);
        self.record(Op::AddRow(a, b))
    }

    /// Subtracts a `1 × k` row from every row of an `n × k` matrix.
    pub fn sub_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (a, b) = (self.check(a)?, self.check(row)?);
        self.record(Op::SubRow(a, b))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let a = self.check(a)?;
        self.record(Op::Relu(a))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let a = self.check(a)?;
        self.record(Op::Scale(a, factor))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts
            .iter()
            .map(|&v| self.check(v))
            .collect::<Result<Vec<_>>>()?;
        self.record(Op::ConcatCols(idx))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts
            .iter()
            .map(|&v| self.check(v))
            .collect::<Result<Vec<_>>>()?;
        self.record(Op::ConcatRows(idx))
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let a = self.check(a)?;
        self.record(Op::GatherRows(a, rows.to_vec()))
    }

    pub fn row(&mut self, a: Var, r: usize) -> Result<Var> {
        self.gather_rows(a, &[r])
    }

    /// Column-wise mean, producing a `1 × k` row.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let a = self.check(a)?;
        self.record(Op::MeanRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let a = self.check(a)?;
        self.record(Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let a = self.check(a)?;
        self.record(Op::Mean(a))
    }

    /// Mean squared difference between two equally shaped values.
    pub fn mse(&mut self, predictions: Var, truths: Var) -> Result<Var> {
        let diff = self.sub(predictions, truths)?;
        let sq = self.mul(diff, diff)?;
        self.mean(sq)
    }

    /// Recomputes every non-leaf value from the recorded leaves.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Constant | Op::Param(_) => node.value.clone(),
                ref op => evaluate(op, |i| &values[i])?,
            };
            values.push(v);
        }
        Ok(values)
    }

    /// True when [`Tape::replay`] reproduces every recorded value bit for bit.
    pub fn replay_matches(&self) -> Result<bool> {
        let replayed = self.replay()?;
        Ok(replayed.iter().zip(&self.nodes).all(|(r, n)| {
            r.shape() == n.value.shape()
                && r.data()
                    .iter()
                    .zip(n.value.data())
                    .all(|(a, b)| a.to_bits() == b.to_bits())
        }))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = self.check(loss)?;
        let loss_value = &self.nodes[root].value;
        if !loss_value.is_scalar() {
            return Err(TensorError::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root + 1];
        grads[root] = Some(Tensor::new(loss_value.shape().to_vec(), vec![1.0])?);

        for i in (0..=root).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Constant | Op::Param(_)) {
                continue;
            }
            // Interior gradients are dropped once propagated; leaves keep theirs.
            let Some(g) = grads[i].take() else { continue };
            let needs = |j: usize| self.nodes[j].requires_grad;
            let emit = |grads: &mut Vec<Option<Tensor>>, j: usize, t: Tensor| match &mut grads[j] {
                Some(acc) => acc.add_assign(&t),
                slot @ None => *slot = Some(t),
            };
            match &node.op {
                Op::Constant | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    if needs(*a) {
                        emit(&mut grads, *a, g.matmul_t(&self.nodes[*b].value)?);
                    }
                    if needs(*b) {
                        emit(&mut grads, *b, self.nodes[*a].value.t_matmul(&g)?);
                    }
                }
                Op::SpMM(s, a) => {
                    if needs(*a) {
                        emit(&mut grads, *a, s.t_matmul(&g)?);
                    }
                }
                Op::Add(a, b) => {
                    if needs(*a) {
                        emit(&mut grads, *a, g.clone());
                    }
                    if needs(*b) {
                        emit(&mut grads, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if needs(*a) {
                        emit(&mut grads, *a, g.clone());
                    }
                    if needs(*b) {
                        emit(&mut grads, *b, g.map(|x| -x));
                    }
                }
                Op::Mul(a, b) => {
                    if needs(*a) {
                        emit(
                            &mut grads,
                            *a,
                            g.zip_with(&self.nodes[*b].value, "mul", |x, y| x * y)?,
                        );
                    }
                    if needs(*b) {
                        emit(
                            &mut grads,
                            *b,
                            g.zip_with(&self.nodes[*a].value, "mul", |x, y| x * y)?,
                        );
                    }
                }
                Op::AddRow(a, b) | Op::SubRow(a, b) => {
                    let sign = if matches!(node.op, Op::AddRow(..)) {
                        1.0
                    } else {
                        -1.0
                    };
                    if needs(*b) {
                        let mut col = vec![0.0; g.cols()];
                        for r in 0..g.rows() {
                            for (c, &v) in col.iter_mut().zip(g.row(r)) {
                                *c += v;
                            }
                        }
                        emit(
                            &mut grads,
                            *b,
                            Tensor::row_vector(col.into_iter().map(|c| sign * c).collect()),
                        );
                    }
                    if needs(*a) {
                        emit(&mut grads, *a, g);
                    }
                }
                Op::Relu(a) => {
                    if needs(*a) {
                        let masked = g.zip_with(&self.nodes[*a].value, "relu", |x, y| {
                            if y > 0.0 {
                                x
                            } else {
                                0.0
                            }
                        })?;
                        emit(&mut grads, *a, masked);
                    }
                }
                Op::Scale(a, f) => {
                    if needs(*a) {
                        emit(&mut grads, *a, g.map(|x| x * f));
                    }
                }
                Op::ConcatCols(xs) => {
                    let mut offset = 0;
                    for &x in xs {
                        let w = self.nodes[x].value.cols();
                        if needs(x) {
                            let mut data = Vec::with_capacity(g.rows() * w);
                            for r in 0..g.rows() {
                                data.extend_from_slice(&g.row(r)[offset..offset + w]);
                            }
                            emit(&mut grads, x, Tensor::matrix(g.rows(), w, data)?);
                        }
                        offset += w;
                    }
                }
                Op::ConcatRows(xs) => {
                    let cols = g.cols();
                    let mut offset = 0;
                    for &x in xs {
                        let h = self.nodes[x].value.rows();
                        if needs(x) {
                            let data = g.data()[offset * cols..(offset + h) * cols].to_vec();
                            emit(&mut grads, x, Tensor::matrix(h, cols, data)?);
                        }
                        offset += h;
                    }
                }
                Op::GatherRows(a, idx) => {
                    if needs(*a) {
                        let src = &self.nodes[*a].value;
                        let mut out = Tensor::zeros(src.shape());
                        for (k, &r) in idx.iter().enumerate() {
                            for (o, &v) in out.row_mut(r).iter_mut().zip(g.row(k)) {
                                *o += v;
                            }
                        }
                        emit(&mut grads, *a, out);
                    }
                }
                Op::MeanRows(a) => {
                    if needs(*a) {
                        let src = &self.nodes[*a].value;
                        let n = src.rows() as f64;
                        let mut out = Tensor::zeros(src.shape());
                        for r in 0..src.rows() {
                            for (o, &v) in out.row_mut(r).iter_mut().zip(g.data()) {
                                *o = v / n;
                            }
                        }
                        emit(&mut grads, *a, out);
                    }
                }
                Op::Sum(a) | Op::Mean(a) => {
                    if needs(*a) {
                        let src = &self.nodes[*a].value;
                        let scale = if matches!(node.op, Op::Mean(_)) {
                            1.0 / src.numel() as f64
                        } else {
                            1.0
                        };
                        let v = g.item() * scale;
                        emit(
                            &mut grads,
                            *a,
                            Tensor::new(src.shape().to_vec(), vec![v; src.numel()])?,
                        );
                    }
                }
            }
        }

        let mut by_param = BTreeMap::new();
        for (&id, &index) in &self.params {
            let g = if index <= root {
                grads[index].take()
            } else {
                None
            };
            let g = g.unwrap_or_else(|| Tensor::zeros(self.nodes[index].value.shape()));
            by_param.insert(id, g);
        }
        Ok(Gradients { by_param })
    }
}

/// Gradients of a scalar loss with respect to every parameter registered on
/// the tape that produced it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    by_param: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Result<&Tensor> {
        self.by_param
            .get(&id)
            .ok_or(TensorError::MissingGradient(id.0))
    }

    pub fn get_mut(&mut self, id: ParamId) -> Result<&mut Tensor> {
        self.by_param
            .get_mut(&id)
            .ok_or(TensorError::MissingGradient(id.0))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.by_param.iter().map(|(&k, v)| (k, v))
    }

    pub fn insert(&mut self, id: ParamId, grad: Tensor) {
        self.by_param.insert(id, grad);
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }
}
