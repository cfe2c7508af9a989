//! Explicit, per-step reverse-mode tape.
//!
//! Every differentiable operation appends one node holding its forward value.
//! [`Tape::backward`] walks the nodes in strict reverse order and returns the
//! gradients of every named parameter that influenced the loss.

use std::cell::{Ref, RefCell};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Gradients keyed by parameter name.
pub type Gradients<T> = BTreeMap<String, Tensor<T>>;

#[derive(Debug)]
enum Op<T> {
    Constant,
    Param(String),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    AddBias(Var, Var),
    MulCol(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Reshape(Var),
    Slice(Var, usize),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    Concat(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Softmax(Var),
    Sum(Var),
    SmoothedXent {
        logits: Var,
        probs: Tensor<T>,
        targets: Vec<usize>,
        mask: Vec<bool>,
        smoothing: T,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::AddBias(..) => "add_bias",
            Op::MulCol(..) => "mul_col",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Reshape(_) => "reshape",
            Op::Slice(..) => "slice",
            Op::SliceCols(..) => "slice_cols",
            Op::ConcatCols(_) => "concat_cols",
            Op::Concat(_) => "concat",
            Op::GatherRows(..) => "gather_rows",
            Op::Softmax(_) => "softmax",
            Op::Sum(_) => "sum",
            Op::SmoothedXent { .. } => "smoothed_cross_entropy",
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Ordered record of executed operations for one training (or decoding) step.
#[derive(Debug)]
pub struct Tape<T: Element> {
    nodes: RefCell<Vec<Node<T>>>,
    check_finite: bool,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    /// Non-finite detection is on in debug builds only.
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            check_finite: cfg!(debug_assertions),
        }
    }

    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Result<Var> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::NonFinite(format!("operation {} produced NaN/Inf", op.name())));
        }
        Ok(self.push_unchecked(value, op, needs_grad))
    }

    fn push_unchecked(&self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, needs_grad });
        Var(nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].needs_grad)
    }

    /// Records a constant input (no gradient).
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.push_unchecked(value, Op::Constant, false)
    }

    /// Records a named trainable leaf. Its gradient is reported under `name`.
    pub fn param(&self, name: impl Into<String>, value: Tensor<T>) -> Var {
        self.push_unchecked(value, Op::Param(name.into()), true)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes.borrow()[v.0].value.data()[0]
    }

    fn unary(&self, x: Var, f: impl Fn(&Tensor<T>) -> Result<Tensor<T>>, op: Op<T>) -> Result<Var> {
        let value = f(&self.value(x))?;
        let needs = self.needs(&[x]);
        self.push(value, op, needs)
    }

    fn binary(
        &self,
        a: Var,
        b: Var,
        f: impl Fn(&Tensor<T>, &Tensor<T>) -> Result<Tensor<T>>,
        op: Op<T>,
    ) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            f(&nodes[a.0].value, &nodes[b.0].value)?
        };
        let needs = self.needs(&[a, b]);
        self.push(value, op, needs)
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x.matmul(y), Op::MatMul(a, b))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x.zip_map(y, |p, q| p + q), Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x.zip_map(y, |p, q| p - q), Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x.zip_map(y, |p, q| p * q), Op::Mul(a, b))
    }

    /// Multiplication by a scalar constant.
    pub fn scale(&self, x: Var, factor: T) -> Result<Var> {
        self.unary(x, |t| Ok(t.map(|v| v * factor)), Op::Scale(x, factor))
    }

    pub fn add_scalar(&self, x: Var, c: T) -> Result<Var> {
        self.unary(x, |t| Ok(t.map(|v| v + c)), Op::AddScalar(x))
    }

    /// `x[r×c] + b[c]`, the bias added to every row.
    pub fn add_bias(&self, x: Var, b: Var) -> Result<Var> {
        self.binary(
            x,
            b,
            |x, b| {
                let (_, cols) = x.dims2()?;
                if x.rank() != 2 || b.len() != cols {
                    return Err(Error::shape(format!("add_bias {:?} + {:?}", x.shape(), b.shape())));
                }
                let mut out = x.clone();
                for row in out.data_mut().chunks_mut(cols) {
                    for (o, &bv) in row.iter_mut().zip(b.data()) {
                        *o += bv;
                    }
                }
                Ok(out)
            },
            Op::AddBias(x, b),
        )
    }

    /// `x[r×c] ⊙ col[r×1]`, scaling each row by one coefficient.
    pub fn mul_col(&self, x: Var, col: Var) -> Result<Var> {
        self.binary(
            x,
            col,
            |x, c| {
                let (rows, cols) = x.dims2()?;
                if x.rank() != 2 || c.len() != rows {
                    return Err(Error::shape(format!("mul_col {:?} * {:?}", x.shape(), c.shape())));
                }
                let mut out = x.clone();
                for (row, &s) in out.data_mut().chunks_mut(cols).zip(c.data()) {
                    for o in row {
                        *o *= s;
                    }
                }
                Ok(out)
            },
            Op::MulCol(x, col),
        )
    }

    pub fn tanh(&self, x: Var) -> Result<Var> {
        self.unary(x, |t| Ok(t.map(|v| v.tanh())), Op::Tanh(x))
    }

    pub fn sigmoid(&self, x: Var) -> Result<Var> {
        self.unary(x, |t| Ok(t.map(sigmoid)), Op::Sigmoid(x))
    }

    pub fn exp(&self, x: Var) -> Result<Var> {
        self.unary(x, |t| Ok(t.map(|v| v.exp())), Op::Exp(x))
    }

    pub fn log(&self, x: Var) -> Result<Var> {
        self.unary(
            x,
            |t| {
                if let Some(v) = t.data().iter().find(|&&v| v <= T::zero()) {
                    return Err(Error::Domain(format!("log of non-positive value {v:?}")));
                }
                Ok(t.map(|v| v.ln()))
            },
            Op::Log(x),
        )
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        self.unary(x, |t| t.clone().reshape(shape), Op::Reshape(x))
    }

    /// Contiguous window of the flattened input, viewed with `shape`.
    pub fn slice(&self, x: Var, offset: usize, shape: &[usize]) -> Result<Var> {
        self.unary(
            x,
            |t| {
                let n: usize = shape.iter().product();
                if offset + n > t.len() {
                    return Err(Error::shape(format!(
                        "slice [{offset}, {}) of tensor with {} values",
                        offset + n,
                        t.len()
                    )));
                }
                Tensor::new(shape.to_vec(), t.data()[offset..offset + n].to_vec())
            },
            Op::Slice(x, offset),
        )
    }

    /// Columns `[start, start + width)` of a rank-2 tensor.
    pub fn slice_cols(&self, x: Var, start: usize, width: usize) -> Result<Var> {
        self.unary(
            x,
            |t| {
                let (rows, cols) = t.dims2()?;
                if start + width > cols || width == 0 {
                    return Err(Error::shape(format!(
                        "columns [{start}, {}) of {:?}",
                        start + width,
                        t.shape()
                    )));
                }
                let mut data = Vec::with_capacity(rows * width);
                for r in 0..rows {
                    data.extend_from_slice(&t.row(r)[start..start + width]);
                }
                Tensor::new(vec![rows, width], data)
            },
            Op::SliceCols(x, start),
        )
    }

    /// Concatenation along columns of rank-2 tensors with equal row counts.
    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::contract("concat of zero tensors"));
        }
        let value = {
            let nodes = self.nodes.borrow();
            let rows = nodes[parts[0].0].value.dims2()?.0;
            let mut widths = Vec::with_capacity(parts.len());
            for p in parts {
                let (r, c) = nodes[p.0].value.dims2()?;
                if r != rows {
                    return Err(Error::shape("concat_cols with different row counts"));
                }
                widths.push(c);
            }
            let total: usize = widths.iter().sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for p in parts {
                    data.extend_from_slice(nodes[p.0].value.row(r));
                }
            }
            Tensor::new(vec![rows, total], data)?
        };
        let needs = self.needs(parts);
        self.push(value, Op::ConcatCols(parts.to_vec()), needs)
    }

    /// Flat concatenation into a rank-1 tensor.
    pub fn concat(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::contract("concat of zero tensors"));
        }
        let value = {
            let nodes = self.nodes.borrow();
            let data: Vec<T> = parts
                .iter()
                .flat_map(|p| nodes[p.0].value.data().iter().copied())
                .collect();
            Tensor::vector(data)
        };
        let needs = self.needs(parts);
        self.push(value, Op::Concat(parts.to_vec()), needs)
    }

    /// Selects rows of a rank-2 table (embedding lookup).
    pub fn gather_rows(&self, table: Var, rows: &[usize]) -> Result<Var> {
        self.unary(
            table,
            |t| {
                let (n, cols) = t.dims2()?;
                let mut data = Vec::with_capacity(rows.len() * cols);
                for &r in rows {
                    if r >= n {
                        return Err(Error::Lookup { index: r, size: n });
                    }
                    data.extend_from_slice(t.row(r));
                }
                Tensor::new(vec![rows.len(), cols], data)
            },
            Op::GatherRows(table, rows.to_vec()),
        )
    }

    /// Row-wise softmax over the last axis. Masked-out entries (`false`) get
    /// probability zero; a fully masked row is a contract error.
    pub fn softmax(&self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        self.unary(
            x,
            |t| {
                let (_, cols) = t.dims2()?;
                if let Some(m) = mask {
                    if m.len() != t.len() {
                        return Err(Error::shape("softmax mask length"));
                    }
                }
                let mut out = t.clone();
                for (r, row) in out.data_mut().chunks_mut(cols).enumerate() {
                    let keep = |j: usize| mask.is_none_or(|m| m[r * cols + j]);
                    softmax_row(row, keep)?;
                }
                Ok(out)
            },
            Op::Softmax(x),
        )
    }

    pub fn sum(&self, x: Var) -> Result<Var> {
        self.unary(x, |t| Ok(Tensor::scalar(t.sum())), Op::Sum(x))
    }

    /// Summed label-smoothed cross-entropy of `logits[B×V]` against
    /// `targets`, skipping rows where `mask` is false. The smoothed target is
    /// `(1 − ε)·onehot + ε/V`.
    pub fn smoothed_cross_entropy(&self, logits: Var, targets: &[usize], mask: &[bool], smoothing: T) -> Result<Var> {
        let (value, probs) = {
            let nodes = self.nodes.borrow();
            let t = &nodes[logits.0].value;
            let (rows, vocab) = t.dims2()?;
            if targets.len() != rows || mask.len() != rows {
                return Err(Error::shape("targets/mask length must equal logit rows"));
            }
            let mut probs = t.clone();
            let uniform = smoothing / T::lit(vocab as f64);
            let mut total = T::zero();
            for (r, row) in probs.data_mut().chunks_mut(vocab).enumerate() {
                let logz = log_sum_exp(row);
                if mask[r] {
                    let target = targets[r];
                    if target >= vocab {
                        return Err(Error::Lookup {
                            index: target,
                            size: vocab,
                        });
                    }
                    for (j, &z) in row.iter().enumerate() {
                        let q = if j == target {
                            T::one() - smoothing + uniform
                        } else {
                            uniform
                        };
                        total -= q * (z - logz);
                    }
                }
                for z in row.iter_mut() {
                    *z = (*z - logz).exp();
                }
            }
            (Tensor::scalar(total), probs)
        };
        let needs = self.needs(&[logits]);
        self.push(
            value,
            Op::SmoothedXent {
                logits,
                probs,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                smoothing,
            },
            needs,
        )
    }

    /// Reverse pass from a scalar `loss`, returning parameter gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(nodes[loss.0].value.shape(), T::one()));
        let mut out = Gradients::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.needs_grad {
                continue;
            }
            let mut acc = |v: Var, t: Tensor<T>| -> Result<()> {
                if !nodes[v.0].needs_grad {
                    return Ok(());
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.add_assign(&t),
                    slot @ None => {
                        *slot = Some(t);
                        Ok(())
                    }
                }
            };
            let val = |v: Var| &nodes[v.0].value;
            match &node.op {
                Op::Constant => {}
                Op::Param(name) => match out.get_mut(name) {
                    Some(existing) => existing.add_assign(&g)?,
                    None => {
                        out.insert(name.clone(), g);
                    }
                },
                Op::MatMul(a, b) => {
                    let (m, k) = val(*a).dims2()?;
                    let n = val(*b).dims2()?.1;
                    if nodes[a.0].needs_grad {
                        let mut da = vec![T::zero(); m * k];
                        T::gemm(m, n, k, g.data(), false, val(*b).data(), true, &mut da, false);
                        acc(*a, Tensor::new(vec![m, k], da)?)?;
                    }
                    if nodes[b.0].needs_grad {
                        let mut db = vec![T::zero(); k * n];
                        T::gemm(k, m, n, val(*a).data(), true, g.data(), false, &mut db, false);
                        acc(*b, Tensor::new(vec![k, n], db)?)?;
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone())?;
                    acc(*b, g)?;
                }
                Op::Sub(a, b) => {
                    acc(*b, g.map(|v| -v))?;
                    acc(*a, g)?;
                }
                Op::Mul(a, b) => {
                    acc(*a, g.zip_map(val(*b), |p, q| p * q)?)?;
                    acc(*b, g.zip_map(val(*a), |p, q| p * q)?)?;
                }
                Op::Scale(x, factor) => {
                    let f = *factor;
                    acc(*x, g.map(|v| v * f))?;
                }
                Op::AddScalar(x) => acc(*x, g)?,
                Op::AddBias(x, b) => {
                    let (_, cols) = g.dims2()?;
                    let mut db = vec![T::zero(); cols];
                    for row in g.data().chunks(cols) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    acc(*b, Tensor::new(val(*b).shape().to_vec(), db)?)?;
                    acc(*x, g)?;
                }
                Op::MulCol(x, c) => {
                    let (_, cols) = g.dims2()?;
                    let xv = val(*x);
                    let cv = val(*c);
                    if nodes[c.0].needs_grad {
                        let dc: Vec<T> = g
                            .data()
                            .chunks(cols)
                            .zip(xv.data().chunks(cols))
                            .map(|(gr, xr)| gr.iter().zip(xr).fold(T::zero(), |s, (&p, &q)| s + p * q))
                            .collect();
                        acc(*c, Tensor::new(cv.shape().to_vec(), dc)?)?;
                    }
                    let mut dx = g;
                    for (row, &s) in dx.data_mut().chunks_mut(cols).zip(cv.data()) {
                        for v in row {
                            *v *= s;
                        }
                    }
                    acc(*x, dx)?;
                }
                Op::Tanh(x) => {
                    acc(*x, g.zip_map(&node.value, |gv, y| gv * (T::one() - y * y))?)?;
                }
                Op::Sigmoid(x) => {
                    acc(*x, g.zip_map(&node.value, |gv, y| gv * y * (T::one() - y))?)?;
                }
                Op::Exp(x) => acc(*x, g.zip_map(&node.value, |gv, y| gv * y)?)?,
                Op::Log(x) => acc(*x, g.zip_map(val(*x), |gv, xv| gv / xv)?)?,
                Op::Reshape(x) => acc(*x, g.reshape(val(*x).shape())?)?,
                Op::Slice(x, offset) => {
                    let mut dx = Tensor::zeros(val(*x).shape());
                    dx.data_mut()[*offset..*offset + g.len()].copy_from_slice(g.data());
                    acc(*x, dx)?;
                }
                Op::SliceCols(x, start) => {
                    let (rows, cols) = val(*x).dims2()?;
                    let width = g.dims2()?.1;
                    let mut dx = Tensor::zeros(val(*x).shape());
                    for r in 0..rows {
                        dx.data_mut()[r * cols + start..r * cols + start + width].copy_from_slice(g.row(r));
                    }
                    acc(*x, dx)?;
                }
                Op::ConcatCols(parts) => {
                    let (rows, total) = g.dims2()?;
                    let mut start = 0;
                    for p in parts {
                        let width = val(*p).dims2()?.1;
                        let mut data = Vec::with_capacity(rows * width);
                        for r in 0..rows {
                            data.extend_from_slice(&g.data()[r * total + start..r * total + start + width]);
                        }
                        acc(*p, Tensor::new(val(*p).shape().to_vec(), data)?)?;
                        start += width;
                    }
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let n = val(*p).len();
                        let data = g.data()[start..start + n].to_vec();
                        acc(*p, Tensor::new(val(*p).shape().to_vec(), data)?)?;
                        start += n;
                    }
                }
                Op::GatherRows(table, rows) => {
                    let (_, cols) = val(*table).dims2()?;
                    let mut dt = Tensor::zeros(val(*table).shape());
                    for (i, &r) in rows.iter().enumerate() {
                        let dst = &mut dt.data_mut()[r * cols..(r + 1) * cols];
                        for (d, &v) in dst.iter_mut().zip(g.row(i)) {
                            *d += v;
                        }
                    }
                    acc(*table, dt)?;
                }
                Op::Softmax(x) => {
                    let (_, cols) = node.value.dims2()?;
                    let mut dx = node.value.clone();
                    for (dr, gr) in dx.data_mut().chunks_mut(cols).zip(g.data().chunks(cols)) {
                        let dot = dr.iter().zip(gr).fold(T::zero(), |s, (&y, &gv)| s + y * gv);
                        for (d, &gv) in dr.iter_mut().zip(gr) {
                            *d *= gv - dot;
                        }
                    }
                    acc(*x, dx)?;
                }
                Op::Sum(x) => acc(*x, Tensor::full(val(*x).shape(), g.data()[0]))?,
                Op::SmoothedXent {
                    logits,
                    probs,
                    targets,
                    mask,
                    smoothing,
                } => {
                    let (_, vocab) = probs.dims2()?;
                    let scale = g.data()[0];
                    let uniform = *smoothing / T::lit(vocab as f64);
                    let mut dx = probs.clone();
                    for (r, row) in dx.data_mut().chunks_mut(vocab).enumerate() {
                        if !mask[r] {
                            row.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        for (j, v) in row.iter_mut().enumerate() {
                            let q = if j == targets[r] {
                                T::one() - *smoothing + uniform
                            } else {
                                uniform
                            };
                            *v = (*v - q) * scale;
                        }
                    }
                    acc(*logits, dx)?;
                }
            }
        }
        Ok(out)
    }
}

pub(crate) fn sigmoid<T: Element>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn log_sum_exp<T: Element>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let sum = row.iter().fold(T::zero(), |s, &z| s + (z - max).exp());
    max + sum.ln()
}

fn softmax_row<T: Element>(row: &mut [T], keep: impl Fn(usize) -> bool) -> Result<()> {
    let mut max = T::neg_infinity();
    for (j, &z) in row.iter().enumerate() {
        if keep(j) && z > max {
            max = z;
        }
    }
    if max == T::neg_infinity() {
        return Err(Error::contract("softmax over a fully masked row"));
    }
    let mut sum = T::zero();
    for (j, z) in row.iter_mut().enumerate() {
        *z = if keep(j) { (*z - max).exp() } else { T::zero() };
        sum += *z;
    }
    for z in row.iter_mut() {
        *z /= sum;
    }
    Ok(())
}

/// Softmax of a plain vector with max-subtraction.
pub fn softmax<T: Element>(x: &[T]) -> Vec<T> {
    let mut out = x.to_vec();
    if !out.is_empty() {
        softmax_row(&mut out, |_| true).expect("unmasked row");
    }
    out
}

/// Log-softmax of a plain vector.
pub fn log_softmax<T: Element>(x: &[T]) -> Vec<T> {
    let logz = log_sum_exp(x);
    x.iter().map(|&z| z - logz).collect()
}
