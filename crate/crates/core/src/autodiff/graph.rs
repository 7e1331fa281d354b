//! Eager tape of tensor operations with reverse-mode gradients.
//!
//! Every operation evaluates immediately and appends a node to the tape.
//! Nodes only reference earlier nodes, so tape order is a topological order
//! and [`Graph::backward`] walks it once in reverse.
//!
//! A tape supports a single backward pass; a second call returns an error
//! instead of silently accumulating. Build a fresh graph per step.

use nalgebra::DMatrix;

use super::kernels::{self, sigmoid, softplus};
use super::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{axis_extents, Tensor};

/// Lower bound applied to arguments of `log` and to `div` denominators.
pub const LOG_DIV_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Input,
    Param(String),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Square(Var),
    Relu(Var),
    Softplus(Var),
    Softmax(Var),
    Sum(Var),
    Mean(Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Reshape(Var),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Transpose(Var),
    Scale(Var, f64),
    Offset(Var),
    AddRow(Var, Var),
    SubRow(Var, Var),
    MulRow(Var, Var),
    MulScalar(Var, Var),
    SumRows(Var),
    MeanRows(Var),
    ClampMin(Var, f64),
    GaussCovNll {
        resid: Var,
        cov: Var,
        gamma: f64,
        // cached Sigma^{-1} and Sigma^{-1} r
        inv: Vec<f64>,
        solved: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

/// Gradients of one backward pass, kept for parameters and inputs.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(String, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// `(parameter name, gradient)` for every parameter used on the tape.
    pub fn params(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.params
            .iter()
            .filter_map(|(name, i)| self.grads[*i].as_deref().map(|g| (name.as_str(), g)))
    }
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape(format!("{op}: {a:?} vs {b:?}"))
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Constant => false,
            Op::Input | Op::Param(_) => true,
            other => parents(other).iter().any(|p| self.nodes[p.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn real(&self, t: &Tensor) -> Result<()> {
        if t.is_complex() {
            return Err(Error::invalid("autodiff operates on real tensors only"));
        }
        Ok(())
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.real(&t)?;
        Ok(self.push(t, Op::Constant))
    }

    /// A leaf whose gradient is retained (used by gradient checks).
    pub fn input(&mut self, t: Tensor) -> Result<Var> {
        self.real(&t)?;
        Ok(self.push(t, Op::Input))
    }

    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let t = store
            .get(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))?
            .clone();
        Ok(self.push(t, Op::Param(name.to_string())))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = &self.nodes[x.0].value;
        let data = t.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::from_vec(t.shape().to_vec(), data).expect("same shape");
        self.push(value, op)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta.shape(), tb.shape()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::from_vec(ta.shape().to_vec(), data)?;
        Ok(self.push(value, op))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let c = kernels::matmul(self.data(a), self.data(b), m, k, n);
        Ok(self.push(Tensor::from_vec(vec![m, n], c)?, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// `a / max(b, 1e-12)`; intended for positive denominators.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y.max(LOG_DIV_FLOOR), Op::Div(a, b))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    /// `ln(max(x, 1e-12))`.
    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(LOG_DIV_FLOOR).ln(), Op::Log(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, f64::abs, Op::Abs(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.unary(x, |v| v * factor, Op::Scale(x, factor))
    }

    /// Adds a constant to every element.
    pub fn offset(&mut self, x: Var, by: f64) -> Var {
        self.unary(x, |v| v + by, Op::Offset(x))
    }

    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Var {
        self.unary(x, |v| v.max(floor), Op::ClampMin(x, floor))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let cols = *t
            .shape()
            .last()
            .ok_or_else(|| Error::shape("softmax of a scalar"))?;
        let mut out = t.data().to_vec();
        for row in out.chunks_exact_mut(cols) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let value = Tensor::from_vec(t.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Softmax(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        let s = d.iter().sum::<f64>() / d.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let base = self.shape(first).to_vec();
        axis_extents(&base, axis)?;
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len()
                || s.iter()
                    .zip(&base)
                    .enumerate()
                    .any(|(i, (x, y))| i != axis && x != y)
            {
                return Err(shape_err("concat", &base, s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_extents(&shape, axis)?;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis];
                let d = self.data(p);
                data.extend_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let value = Tensor::from_vec(shape, data)?;
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, n, inner) = axis_extents(&shape, axis)?;
        if len == 0 || start + len > n {
            return Err(Error::shape(format!(
                "slice {start}..{} of axis {axis} with size {n}",
                start + len
            )));
        }
        let d = self.data(x);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * n + start) * inner;
            data.extend_from_slice(&d[from..from + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::from_vec(out_shape, data)?;
        Ok(self.push(value, Op::Slice { x, axis, start }))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::shape(format!(
                "transpose of rank-{} tensor",
                s.len()
            )));
        }
        let data = kernels::transpose(self.data(x), s[0], s[1]);
        let value = Tensor::from_vec(vec![s[1], s[0]], data)?;
        Ok(self.push(value, Op::Transpose(x)))
    }

    fn row_op(
        &mut self,
        m: Var,
        v: Var,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Tensor, usize)> {
        let (sm, sv) = (self.shape(m), self.shape(v));
        let cols = sv.iter().product::<usize>();
        if sm.len() != 2 || sm[1] != cols {
            return Err(shape_err(name, sm, sv));
        }
        let vd = self.data(v);
        let data = self
            .data(m)
            .chunks_exact(cols)
            .flat_map(|row| row.iter().zip(vd).map(|(&a, &b)| f(a, b)))
            .collect();
        Ok((Tensor::from_vec(sm.to_vec(), data)?, cols))
    }

    /// Adds vector `v` (any shape with `cols` elements) to each row of `m`.
    pub fn add_row(&mut self, m: Var, v: Var) -> Result<Var> {
        let (t, _) = self.row_op(m, v, "add_row", |a, b| a + b)?;
        Ok(self.push(t, Op::AddRow(m, v)))
    }

    pub fn sub_row(&mut self, m: Var, v: Var) -> Result<Var> {
        let (t, _) = self.row_op(m, v, "sub_row", |a, b| a - b)?;
        Ok(self.push(t, Op::SubRow(m, v)))
    }

    pub fn mul_row(&mut self, m: Var, v: Var) -> Result<Var> {
        let (t, _) = self.row_op(m, v, "mul_row", |a, b| a * b)?;
        Ok(self.push(t, Op::MulRow(m, v)))
    }

    /// Multiplies every element of `x` by the single value held in `s`.
    pub fn mul_scalar(&mut self, s: Var, x: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(Error::shape(format!("mul_scalar by {:?}", self.shape(s))));
        }
        let k = self.data(s)[0];
        let t = self.value(x).scale(k);
        Ok(self.push(t, Op::MulScalar(s, x)))
    }

    /// Column sums of a matrix, shape `[cols]`.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.col_sums(x)?;
        Ok(self.push(t, Op::SumRows(x)))
    }

    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let rows = self.shape(x).first().copied().unwrap_or(1) as f64;
        let t = self.col_sums(x)?.scale(1.0 / rows);
        Ok(self.push(t, Op::MeanRows(x)))
    }

    fn col_sums(&self, x: Var) -> Result<Tensor> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::shape(format!("row reduction of {s:?}")));
        }
        let cols = s[1];
        let mut out = vec![0.0; cols];
        for row in self.data(x).chunks_exact(cols) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        Tensor::from_vec(vec![cols], out)
    }

    /// `gamma * log|Sigma| + r^T Sigma^{-1} r` through a Cholesky factor of
    /// the symmetrized `cov`, as one node with analytic gradients.
    pub fn gauss_cov_nll(&mut self, resid: Var, cov: Var, gamma: f64) -> Result<Var> {
        let d = self.value(resid).numel();
        let sc = self.shape(cov);
        if sc != [d, d] {
            return Err(shape_err("gauss_cov_nll", &[d, d], sc));
        }
        let c = self.data(cov);
        let sym = DMatrix::from_fn(d, d, |i, j| 0.5 * (c[i * d + j] + c[j * d + i]));
        let chol = sym
            .cholesky()
            .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?;
        let l = chol.l();
        let logdet: f64 = 2.0 * (0..d).map(|i| l[(i, i)].ln()).sum::<f64>();
        let r = nalgebra::DVector::from_column_slice(self.data(resid));
        let solved = chol.solve(&r);
        let quad = r.dot(&solved);
        let inv = chol.inverse();
        let inv_rows: Vec<f64> = (0..d * d).map(|i| inv[(i / d, i % d)]).collect();
        let value = Tensor::scalar(gamma * logdet + quad);
        Ok(self.push(
            value,
            Op::GaussCovNll {
                resid,
                cov,
                gamma,
                inv: inv_rows,
                solved: solved.iter().copied().collect(),
            },
        ))
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.backward_done {
            return Err(Error::invalid(
                "backward already ran on this tape; build a new graph",
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..n).rev() {
            let keep = matches!(self.nodes[i].op, Op::Input | Op::Param(_));
            let g = match if keep {
                grads[i].clone()
            } else {
                grads[i].take()
            } {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, node)| match &node.op {
                Op::Param(name) => Some((name.clone(), i)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let slot =
                grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.data().len()]);
            f(slot);
        };
        let zip1 = |x: Var, f: &dyn Fn(f64, f64, f64) -> f64| -> Vec<f64> {
            // (input, output, upstream) -> local contribution
            let xi = self.data(x);
            (0..xi.len()).map(|j| f(xi[j], out[j], g[j])).collect()
        };
        let add_into = |local: Vec<f64>| {
            move |slot: &mut [f64]| slot.iter_mut().zip(&local).for_each(|(a, b)| *a += b)
        };

        match &node.op {
            Op::Constant | Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (da, db) = (self.data(*a), self.data(*b));
                acc(*a, &mut |s| kernels::matmul_nt_acc(g, db, m, k, n, s));
                acc(*b, &mut |s| kernels::matmul_tn_acc(da, g, m, k, n, s));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                acc(*a, &mut |s| {
                    for j in 0..s.len() {
                        s[j] += g[j] * db[j];
                    }
                });
                acc(*b, &mut |s| {
                    for j in 0..s.len() {
                        s[j] += g[j] * da[j];
                    }
                });
            }
            Op::Div(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                acc(*a, &mut |s| {
                    for j in 0..s.len() {
                        s[j] += g[j] / db[j].max(LOG_DIV_FLOOR);
                    }
                });
                acc(*b, &mut |s| {
                    for j in 0..s.len() {
                        if db[j] > LOG_DIV_FLOOR {
                            s[j] -= g[j] * da[j] / (db[j] * db[j]);
                        }
                    }
                });
            }
            Op::Exp(x) => acc(*x, &mut add_into(zip1(*x, &|_, y, g| g * y))),
            Op::Log(x) => acc(
                *x,
                &mut add_into(zip1(*x, &|x, _, g| {
                    if x > LOG_DIV_FLOOR {
                        g / x
                    } else {
                        0.0
                    }
                })),
            ),
            Op::Abs(x) => acc(
                *x,
                &mut add_into(zip1(*x, &|x, _, g| {
                    if x > 0.0 {
                        g
                    } else if x < 0.0 {
                        -g
                    } else {
                        0.0
                    }
                })),
            ),
            Op::Square(x) => acc(*x, &mut add_into(zip1(*x, &|x, _, g| 2.0 * x * g))),
            Op::Relu(x) => acc(
                *x,
                &mut add_into(zip1(*x, &|x, _, g| if x > 0.0 { g } else { 0.0 })),
            ),
            Op::Softplus(x) => acc(*x, &mut add_into(zip1(*x, &|x, _, g| g * sigmoid(x)))),
            Op::Scale(x, f) => {
                let f = *f;
                acc(*x, &mut add_into(zip1(*x, &move |_, _, g| g * f)));
            }
            Op::Offset(x) => acc(*x, &mut add_into(zip1(*x, &|_, _, g| g))),
            Op::ClampMin(x, floor) => {
                let floor = *floor;
                acc(
                    *x,
                    &mut add_into(zip1(*x, &move |x, _, g| if x > floor { g } else { 0.0 })),
                );
            }
            Op::Softmax(x) => {
                let cols = *node.value.shape().last().unwrap();
                acc(*x, &mut |s| {
                    for ((srow, yrow), grow) in s
                        .chunks_exact_mut(cols)
                        .zip(out.chunks_exact(cols))
                        .zip(g.chunks_exact(cols))
                    {
                        let dot: f64 = yrow.iter().zip(grow).map(|(y, g)| y * g).sum();
                        for j in 0..cols {
                            srow[j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |s| s.iter_mut().for_each(|v| *v += g[0])),
            Op::Mean(x) => {
                let k = g[0] / self.value(*x).numel() as f64;
                acc(*x, &mut |s| s.iter_mut().for_each(|v| *v += k));
            }
            Op::Concat { parts, axis } => {
                let shape = node.value.shape();
                let (outer, total, inner) = axis_extents(shape, *axis).unwrap();
                let mut offset = 0;
                for &p in parts {
                    let len = self.shape(p)[*axis];
                    acc(p, &mut |s| {
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            let dst = o * len * inner;
                            for j in 0..len * inner {
                                s[dst + j] += g[src + j];
                            }
                        }
                    });
                    offset += len;
                }
            }
            Op::Reshape(x) => acc(*x, &mut |s| s.iter_mut().zip(g).for_each(|(a, b)| *a += b)),
            Op::Slice { x, axis, start } => {
                let (outer, n, inner) = axis_extents(self.shape(*x), *axis).unwrap();
                let len = node.value.shape()[*axis];
                acc(*x, &mut |s| {
                    for o in 0..outer {
                        let dst = (o * n + start) * inner;
                        let src = o * len * inner;
                        for j in 0..len * inner {
                            s[dst + j] += g[src + j];
                        }
                    }
                });
            }
            Op::Transpose(x) => {
                let s_out = node.value.shape();
                let gt = kernels::transpose(g, s_out[0], s_out[1]);
                acc(*x, &mut |s| {
                    s.iter_mut().zip(&gt).for_each(|(a, b)| *a += b)
                });
            }
            Op::AddRow(m, v) | Op::SubRow(m, v) => {
                let sign = if matches!(node.op, Op::SubRow(..)) {
                    -1.0
                } else {
                    1.0
                };
                let cols = self.value(*v).numel();
                acc(*m, &mut |s| s.iter_mut().zip(g).for_each(|(a, b)| *a += b));
                acc(*v, &mut |s| {
                    for row in g.chunks_exact(cols) {
                        for (a, b) in s.iter_mut().zip(row) {
                            *a += sign * b;
                        }
                    }
                });
            }
            Op::MulRow(m, v) => {
                let cols = self.value(*v).numel();
                let (dm, dv) = (self.data(*m), self.data(*v));
                acc(*m, &mut |s| {
                    for (j, a) in s.iter_mut().enumerate() {
                        *a += g[j] * dv[j % cols];
                    }
                });
                acc(*v, &mut |s| {
                    for (grow, mrow) in g.chunks_exact(cols).zip(dm.chunks_exact(cols)) {
                        for c in 0..cols {
                            s[c] += grow[c] * mrow[c];
                        }
                    }
                });
            }
            Op::MulScalar(sv, x) => {
                let k = self.data(*sv)[0];
                let dx = self.data(*x);
                acc(*sv, &mut |s| {
                    s[0] += g.iter().zip(dx).map(|(a, b)| a * b).sum::<f64>()
                });
                acc(*x, &mut |s| {
                    s.iter_mut().zip(g).for_each(|(a, b)| *a += k * b)
                });
            }
            Op::SumRows(x) | Op::MeanRows(x) => {
                let rows = self.shape(*x)[0];
                let k = if matches!(node.op, Op::MeanRows(_)) {
                    1.0 / rows as f64
                } else {
                    1.0
                };
                acc(*x, &mut |s| {
                    for row in s.chunks_exact_mut(g.len()) {
                        for (a, b) in row.iter_mut().zip(g) {
                            *a += k * b;
                        }
                    }
                });
            }
            Op::GaussCovNll {
                resid,
                cov,
                gamma,
                inv,
                solved,
            } => {
                let d = solved.len();
                let g0 = g[0];
                acc(*resid, &mut |s| {
                    for j in 0..d {
                        s[j] += 2.0 * g0 * solved[j];
                    }
                });
                acc(*cov, &mut |s| {
                    for r in 0..d {
                        for c in 0..d {
                            s[r * d + c] += g0 * (gamma * inv[r * d + c] - solved[r] * solved[c]);
                        }
                    }
                });
            }
        }
    }
}

fn parents(op: &Op) -> Vec<Var> {
    match op {
        Op::Constant | Op::Input | Op::Param(_) => vec![],
        Op::MatMul(a, b)
        | Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::Div(a, b)
        | Op::AddRow(a, b)
        | Op::SubRow(a, b)
        | Op::MulRow(a, b)
        | Op::MulScalar(a, b) => vec![*a, *b],
        Op::Exp(x)
        | Op::Log(x)
        | Op::Abs(x)
        | Op::Square(x)
        | Op::Relu(x)
        | Op::Softplus(x)
        | Op::Softmax(x)
        | Op::Sum(x)
        | Op::Mean(x)
        | Op::Reshape(x)
        | Op::Transpose(x)
        | Op::Scale(x, _)
        | Op::Offset(x)
        | Op::SumRows(x)
        | Op::MeanRows(x)
        | Op::ClampMin(x, _) => vec![*x],
        Op::Slice { x, .. } => vec![*x],
        Op::Concat { parts, .. } => parts.clone(),
        Op::GaussCovNll { resid, cov, .. } => vec![*resid, *cov],
    }
}
