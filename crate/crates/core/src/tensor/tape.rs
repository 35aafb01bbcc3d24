use std::cell::RefCell;
use std::rc::Rc;

use super::{SparseMatrix, Tensor, EPS};
use crate::error::{Error, Result};

#[derive(Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    SpMM(Rc<SparseMatrix>, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    Abs(usize),
    Clamp(usize, f64, f64),
    Sum(usize),
    SumAxis(usize, usize),
    RowNormalize(usize),
    GatherRows(usize, Rc<[usize]>),
    SliceCols(usize, usize),
    Transpose(usize),
    LogSoftmaxRows(usize, Option<Rc<[bool]>>),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records operations for one forward pass. Not shareable across threads;
/// build a fresh tape per step.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers a leaf whose gradient is wanted.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Registers a leaf that is treated as fixed.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn derived(&self, value: Tensor, op: Op, parents: &[usize]) -> Var<'_> {
        let rg = parents.iter().any(|&p| self.requires_grad(p));
        self.push(value, op, rg)
    }

    /// Reverse sweep from a 1x1 output. Every node is visited at most once,
    /// in reverse recording order; contributions from multiple uses add up.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let out = &nodes[output.id];
        if out.value.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got {}x{}",
                out.value.rows(),
                out.value.cols()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[output.id] = Some(Tensor::scalar(1.0));

        for id in (0..=output.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            let mut acc = |target: usize, contrib: Tensor| {
                if !nodes[target].requires_grad {
                    return;
                }
                match &mut grads[target] {
                    Some(existing) => existing.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            };
            let y = &node.value;
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    if nodes[*a].requires_grad {
                        acc(*a, g.matmul(&bv.transpose())?);
                    }
                    if nodes[*b].requires_grad {
                        acc(*b, av.transpose().matmul(&g)?);
                    }
                }
                Op::SpMM(s, b) => acc(*b, s.transpose_matmul_dense(&g)?),
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*b, g.map(|v| -v));
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    acc(*a, g.zip_map(bv, |g, b| g * b)?);
                    acc(*b, g.zip_map(av, |g, a| g * a)?);
                }
                Op::Scale(a, k) => acc(*a, g.map(|v| v * k)),
                Op::AddScalar(a) => acc(*a, g),
                Op::Relu(a) => {
                    let x = &nodes[*a].value;
                    acc(*a, g.zip_map(x, |g, x| if x > 0.0 { g } else { 0.0 })?);
                }
                Op::Sigmoid(a) => acc(*a, g.zip_map(y, |g, s| g * s * (1.0 - s))?),
                Op::Exp(a) => acc(*a, g.zip_map(y, |g, e| g * e)?),
                Op::Log(a) => {
                    let x = &nodes[*a].value;
                    acc(*a, g.zip_map(x, |g, x| if x > EPS { g / x } else { 0.0 })?);
                }
                Op::Abs(a) => {
                    let x = &nodes[*a].value;
                    acc(*a, g.zip_map(x, |g, x| g * sign(x))?);
                }
                Op::Clamp(a, lo, hi) => {
                    let x = &nodes[*a].value;
                    let (lo, hi) = (*lo, *hi);
                    acc(
                        *a,
                        g.zip_map(x, |g, x| if x >= lo && x <= hi { g } else { 0.0 })?,
                    );
                }
                Op::Sum(a) => {
                    let (r, c) = nodes[*a].value.shape();
                    acc(*a, Tensor::full(r, c, g.data()[0]));
                }
                Op::SumAxis(a, axis) => {
                    let (r, c) = nodes[*a].value.shape();
                    let mut out = Tensor::zeros(r, c);
                    for i in 0..r {
                        for j in 0..c {
                            let gv = if *axis == 0 { g.get(0, j) } else { g.get(i, 0) };
                            out.set(i, j, gv);
                        }
                    }
                    acc(*a, out);
                }
                Op::RowNormalize(a) => {
                    let x = &nodes[*a].value;
                    let mut out = Tensor::zeros(x.rows(), x.cols());
                    for i in 0..x.rows() {
                        let xr = x.row(i);
                        let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                        let gr = g.row(i);
                        let o = out.row_mut(i);
                        if norm > EPS {
                            let yr = y.row(i);
                            let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                            for k in 0..o.len() {
                                o[k] = (gr[k] - yr[k] * dot) / norm;
                            }
                        } else {
                            for k in 0..o.len() {
                                o[k] = gr[k] / EPS;
                            }
                        }
                    }
                    acc(*a, out);
                }
                Op::GatherRows(a, idx) => {
                    let (r, c) = nodes[*a].value.shape();
                    let mut out = Tensor::zeros(r, c);
                    for (k, &src) in idx.iter().enumerate() {
                        for (o, v) in out.row_mut(src).iter_mut().zip(g.row(k)) {
                            *o += v;
                        }
                    }
                    acc(*a, out);
                }
                Op::SliceCols(a, start) => {
                    let (r, c) = nodes[*a].value.shape();
                    let mut out = Tensor::zeros(r, c);
                    for i in 0..r {
                        out.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                    }
                    acc(*a, out);
                }
                Op::Transpose(a) => acc(*a, g.transpose()),
                Op::LogSoftmaxRows(a, mask) => {
                    let mut out = Tensor::zeros(y.rows(), y.cols());
                    let c = y.cols();
                    for i in 0..y.rows() {
                        let live = |j: usize| mask.as_ref().is_none_or(|m| !m[i * c + j]);
                        let gr = g.row(i);
                        let gsum: f64 = (0..c).filter(|&j| live(j)).map(|j| gr[j]).sum();
                        let yr = y.row(i);
                        let o = out.row_mut(i);
                        for j in 0..c {
                            if live(j) {
                                o[j] = gr[j] - yr[j].exp() * gsum;
                            }
                        }
                    }
                    acc(*a, out);
                }
            }
        }

        let requires: Vec<bool> = nodes.iter().map(|n| n.requires_grad).collect();
        let shapes: Vec<(usize, usize)> = nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients {
            grads,
            requires,
            shapes,
        })
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Result of a reverse sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    requires: Vec<bool>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the swept output with respect to `var`. Tracked leaves the
    /// output does not depend on get zeros; untracked values get `None`.
    pub fn wrt(&self, var: Var<'_>) -> Option<Tensor> {
        if !*self.requires.get(var.id)? {
            return None;
        }
        match self.grads.get(var.id) {
            Some(Some(g)) => Some(g.clone()),
            _ => {
                let (r, c) = self.shapes[var.id];
                Some(Tensor::zeros(r, c))
            }
        }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value().shape()
    }

    pub fn item(&self) -> Result<f64> {
        self.value().item()
    }

    fn same_tape(&self, other: &Var<'_>) -> Result<()> {
        if !std::ptr::eq(self.tape, other.tape) {
            return Err(Error::Contract("operands live on different tapes".into()));
        }
        Ok(())
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'t> {
        self.tape.derived(value, op, &[self.id])
    }

    fn binary(&self, other: &Var<'t>, value: Tensor, op: Op) -> Var<'t> {
        self.tape.derived(value, op, &[self.id, other.id])
    }

    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let v = self.value().matmul(&other.value())?;
        Ok(self.binary(other, v, Op::MatMul(self.id, other.id)))
    }

    /// `sparse · self` with the sparse factor held constant.
    pub fn left_spmm(&self, sparse: &Rc<SparseMatrix>) -> Result<Var<'t>> {
        let v = sparse.matmul_dense(&self.value())?;
        Ok(self.unary(v, Op::SpMM(Rc::clone(sparse), self.id)))
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let v = self.value().zip_map(&other.value(), |a, b| a + b)?;
        Ok(self.binary(other, v, Op::Add(self.id, other.id)))
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let v = self.value().zip_map(&other.value(), |a, b| a - b)?;
        Ok(self.binary(other, v, Op::Sub(self.id, other.id)))
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let v = self.value().zip_map(&other.value(), |a, b| a * b)?;
        Ok(self.binary(other, v, Op::Mul(self.id, other.id)))
    }

    pub fn scale(&self, k: f64) -> Var<'t> {
        let v = self.value().map(|x| x * k);
        self.unary(v, Op::Scale(self.id, k))
    }

    pub fn add_scalar(&self, k: f64) -> Var<'t> {
        let v = self.value().map(|x| x + k);
        self.unary(v, Op::AddScalar(self.id))
    }

    pub fn relu(&self) -> Var<'t> {
        let v = self.value().map(|x| x.max(0.0));
        self.unary(v, Op::Relu(self.id))
    }

    pub fn sigmoid(&self) -> Var<'t> {
        let v = self.value().map(sigmoid);
        self.unary(v, Op::Sigmoid(self.id))
    }

    pub fn exp(&self) -> Var<'t> {
        let v = self.value().map(f64::exp);
        self.unary(v, Op::Exp(self.id))
    }

    /// Natural log with inputs in `[0, EPS]` lifted to `EPS`. Negative inputs
    /// are a domain error.
    pub fn log(&self) -> Result<Var<'t>> {
        let x = self.value();
        if let Some(bad) = x.data().iter().find(|&&v| v < 0.0 || v.is_nan()) {
            return Err(Error::Domain(format!("log of {bad}")));
        }
        let v = x.map(|x| x.max(EPS).ln());
        Ok(self.unary(v, Op::Log(self.id)))
    }

    pub fn abs(&self) -> Var<'t> {
        let v = self.value().map(f64::abs);
        self.unary(v, Op::Abs(self.id))
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'t> {
        let v = self.value().map(|x| x.clamp(lo, hi));
        self.unary(v, Op::Clamp(self.id, lo, hi))
    }

    /// Sum of all entries as a 1x1 value; an empty tensor sums to 0.
    pub fn sum(&self) -> Var<'t> {
        let v = Tensor::scalar(self.value().sum());
        self.unary(v, Op::Sum(self.id))
    }

    /// Mean of all entries; an empty tensor has mean 0.
    pub fn mean(&self) -> Var<'t> {
        let n = self.value().len();
        let s = self.sum();
        if n == 0 {
            s
        } else {
            s.scale(1.0 / n as f64)
        }
    }

    /// Sums along `axis` (0 collapses rows to 1xC, 1 collapses columns to Rx1).
    pub fn sum_axis(&self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        let (r, c) = x.shape();
        let v = match axis {
            0 => {
                let mut out = Tensor::zeros(1, c);
                for i in 0..r {
                    for (o, v) in out.data_mut().iter_mut().zip(x.row(i)) {
                        *o += v;
                    }
                }
                out
            }
            1 => Tensor::column(&(0..r).map(|i| x.row(i).iter().sum()).collect::<Vec<_>>()),
            _ => return Err(Error::Shape(format!("axis {axis} invalid for a matrix"))),
        };
        Ok(self.unary(v, Op::SumAxis(self.id, axis)))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Var<'t>> {
        let (r, c) = self.shape();
        let n = if axis == 0 { r } else { c };
        let s = self.sum_axis(axis)?;
        Ok(if n == 0 { s } else { s.scale(1.0 / n as f64) })
    }

    /// Divides each row by `max(‖row‖₂, EPS)`.
    pub fn row_l2_normalize(&self) -> Var<'t> {
        let mut v = (*self.value()).clone();
        for i in 0..v.rows() {
            let row = v.row_mut(i);
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(EPS);
            for x in row.iter_mut() {
                *x /= norm;
            }
        }
        self.unary(v, Op::RowNormalize(self.id))
    }

    pub fn gather_rows(&self, idx: &[usize]) -> Result<Var<'t>> {
        let v = self.value().select_rows(idx)?;
        Ok(self.unary(v, Op::GatherRows(self.id, idx.into())))
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Var<'t>> {
        let v = self.value().slice_cols(start, end)?;
        Ok(self.unary(v, Op::SliceCols(self.id, start)))
    }

    pub fn transpose(&self) -> Var<'t> {
        let v = self.value().transpose();
        self.unary(v, Op::Transpose(self.id))
    }

    /// Row-wise dot products `Σ_k a_ik b_ik` as an Rx1 column.
    pub fn row_dot(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.mul(other)?.sum_axis(1)
    }

    /// Row-wise log-softmax. Entries flagged in `mask` (row-major, `true` =
    /// excluded) take no part in the normalizer, come out as 0 and receive no
    /// gradient.
    pub fn log_softmax_rows(&self, mask: Option<&[bool]>) -> Result<Var<'t>> {
        let x = self.value();
        let (r, c) = x.shape();
        if let Some(m) = mask {
            if m.len() != r * c {
                return Err(Error::Shape(format!(
                    "mask of length {} for a {r}x{c} tensor",
                    m.len()
                )));
            }
        }
        let live = |i: usize, j: usize| mask.is_none_or(|m| !m[i * c + j]);
        let mut out = Tensor::zeros(r, c);
        for i in 0..r {
            let xr = x.row(i);
            let mx = (0..c)
                .filter(|&j| live(i, j))
                .map(|j| xr[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if mx == f64::NEG_INFINITY {
                continue;
            }
            let z: f64 = (0..c)
                .filter(|&j| live(i, j))
                .map(|j| (xr[j] - mx).exp())
                .sum();
            let lse = mx + z.ln();
            let o = out.row_mut(i);
            for j in 0..c {
                if live(i, j) {
                    o[j] = xr[j] - lse;
                }
            }
        }
        let mask = mask.map(Rc::from);
        Ok(self.unary(out, Op::LogSoftmaxRows(self.id, mask)))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::new(
            rows,
            cols,
            (0..rows * cols)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .unwrap()
    }

    /// Central differences of `f` around `x`, step 1e-5.
    fn numeric_grad(x: &Tensor, f: impl Fn(&Tensor) -> f64) -> Tensor {
        let h = 1e-5;
        let mut g = Tensor::zeros(x.rows(), x.cols());
        for k in 0..x.len() {
            let mut plus = x.clone();
            plus.data_mut()[k] += h;
            let mut minus = x.clone();
            minus.data_mut()[k] -= h;
            g.data_mut()[k] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        g
    }

    fn assert_grad_close(analytic: &Tensor, numeric: &Tensor, rel: f64, floor: f64) {
        for (a, n) in analytic.data().iter().zip(numeric.data()) {
            let err = (a - n).abs() / a.abs().max(n.abs()).max(floor);
            assert!(
                err < rel || (a - n).abs() < floor,
                "analytic {a} numeric {n}"
            );
        }
    }

    /// Runs `build` on a fresh tape with `x` as the single parameter and
    /// checks the tape gradient against central differences.
    fn check_unary(x: Tensor, build: impl for<'t> Fn(Var<'t>) -> Var<'t>) {
        let tape = Tape::new();
        let v = tape.param(x.clone());
        let out = build(v);
        let grads = tape.backward(out).unwrap();
        let analytic = grads.wrt(v).unwrap();
        let numeric = numeric_grad(&x, |p| {
            let t = Tape::new();
            build(t.constant(p.clone())).item().unwrap()
        });
        assert_grad_close(&analytic, &numeric, 1e-4, 1e-7);
    }

    #[test]
    fn sigmoid_at_zero() {
        let t = Tape::new();
        assert_eq!(
            t.constant(Tensor::scalar(0.0)).sigmoid().item().unwrap(),
            0.5
        );
    }

    #[test]
    fn relu_definition() {
        let t = Tape::new();
        let v = t
            .constant(Tensor::from_rows(&[[-3.0, 3.0]]).unwrap())
            .relu();
        assert_eq!(v.value().data(), &[0.0, 3.0]);
    }

    #[test]
    fn sigmoid_derivative_at_one() {
        check_unary(Tensor::scalar(1.0), |v| v.sigmoid().sum());
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random(3, 3, &mut rng);
        let b = random(3, 3, &mut rng);
        let tape = Tape::new();
        let av = tape.param(a.clone());
        let bv = tape.constant(b.clone());
        let out = av.matmul(&bv).unwrap().sum();
        let g = tape.backward(out).unwrap().wrt(av).unwrap();
        let numeric = numeric_grad(&a, |p| p.matmul(&b).unwrap().sum());
        assert_grad_close(&g, &numeric, 1e-4, 1e-7);
    }

    #[test]
    fn mean_of_values() {
        let t = Tape::new();
        let v = t.constant(Tensor::from_rows(&[[1.0, 2.0, 3.0]]).unwrap());
        assert_eq!(v.mean().item().unwrap(), 2.0);
    }

    #[test]
    fn empty_sum_is_zero() {
        let t = Tape::new();
        let v = t.constant(Tensor::zeros(0, 3));
        assert_eq!(v.sum().item().unwrap(), 0.0);
        assert_eq!(v.mean().item().unwrap(), 0.0);
        assert_eq!(v.sum_axis(0).unwrap().value().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn invalid_axis() {
        let t = Tape::new();
        let v = t.constant(Tensor::zeros(2, 2));
        assert!(matches!(v.sum_axis(2), Err(Error::Shape(_))));
    }

    #[test]
    fn mean_square_gradient() {
        let t = Tape::new();
        let x = t.param(Tensor::from_rows(&[[1.0, 2.0]]).unwrap());
        let y = x.mul(&x).unwrap().mean();
        let g = t.backward(y).unwrap().wrt(x).unwrap();
        assert_eq!(g.data(), &[1.0, 2.0]);
    }

    #[test]
    fn normalize_three_four_five() {
        let t = Tape::new();
        let v = t
            .constant(Tensor::from_rows(&[[3.0, 4.0], [0.0, 0.0]]).unwrap())
            .row_l2_normalize();
        let val = v.value();
        assert!((val.get(0, 0) - 0.6).abs() < 1e-15);
        assert!((val.get(0, 1) - 0.8).abs() < 1e-15);
        assert_eq!(val.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn normalized_rows_have_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = Tape::new();
        let v = t
            .constant(random(10, 4, &mut rng))
            .row_l2_normalize()
            .value();
        for i in 0..10 {
            let n: f64 = v.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sum_gradient_is_ones() {
        let t = Tape::new();
        let x = t.param(Tensor::zeros(2, 3));
        let g = t.backward(x.sum()).unwrap().wrt(x).unwrap();
        assert!(g.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn reuse_accumulates() {
        let t = Tape::new();
        let x = t.param(Tensor::zeros(2, 2));
        let y = x.sum().add(&x.sum()).unwrap();
        let g = t.backward(y).unwrap().wrt(x).unwrap();
        assert!(g.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn non_scalar_backward_rejected() {
        let t = Tape::new();
        let x = t.param(Tensor::zeros(2, 2));
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn unreached_param_gets_zero_grad_and_constant_none() {
        let t = Tape::new();
        let x = t.param(Tensor::ones(1, 2));
        let unused = t.param(Tensor::ones(3, 1));
        let c = t.constant(Tensor::ones(1, 2));
        let y = x.mul(&c).unwrap().sum();
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(unused).unwrap(), Tensor::zeros(3, 1));
        assert!(g.wrt(c).is_none());
    }

    #[test]
    fn log_domain() {
        let t = Tape::new();
        let v = t.constant(Tensor::from_rows(&[[-0.5]]).unwrap());
        assert!(matches!(v.log(), Err(Error::Domain(_))));
        let z = t.constant(Tensor::scalar(0.0)).log().unwrap();
        assert!((z.item().unwrap() - EPS.ln()).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_elementwise() {
        let t = Tape::new();
        let a = t.constant(Tensor::zeros(2, 2));
        let b = t.constant(Tensor::zeros(2, 3));
        assert!(matches!(a.add(&b), Err(Error::Shape(_))));
    }

    #[test]
    fn masked_log_softmax_values() {
        let t = Tape::new();
        let x = t.constant(Tensor::from_rows(&[[1.0, 2.0, 3.0]]).unwrap());
        let y = x
            .log_softmax_rows(Some(&[true, false, false]))
            .unwrap()
            .value();
        assert_eq!(y.get(0, 0), 0.0);
        assert!((y.get(0, 2) + (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);
        assert!((y.get(0, 1).exp() + y.get(0, 2).exp() - 1.0).abs() < 1e-12);
    }

    fn arb_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
        proptest::collection::vec(-1.0f64..1.0, rows * cols)
            .prop_map(move |d| Tensor::new(rows, cols, d).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn elementwise_gradients_match(x in arb_matrix(3, 4), w in arb_matrix(3, 4)) {
            check_unary(x.clone(), |v| {
                let t = v.tape();
                let wv = t.constant(w.clone());
                v.mul(&wv).unwrap().sum()
            });
            check_unary(x.clone(), |v| v.sigmoid().scale(1.7).sum());
            check_unary(x.clone(), |v| v.exp().add_scalar(0.3).sum());
            check_unary(x.clone(), |v| v.exp().log().unwrap().mul(&v).unwrap().sum());
            check_unary(x.clone(), |v| v.row_l2_normalize().mul(&v.tape().constant(w.clone())).unwrap().sum());
            check_unary(x.clone(), |v| v.log_softmax_rows(None).unwrap().mul(&v.tape().constant(w.clone())).unwrap().sum());
            check_unary(x.clone(), |v| v.sum_axis(0).unwrap().mul(&v.sum_axis(0).unwrap()).unwrap().sum());
            check_unary(x.clone(), |v| v.sum_axis(1).unwrap().exp().sum());
            check_unary(x.clone(), |v| v.transpose().matmul(&v).unwrap().sum());
            check_unary(x.clone(), |v| v.gather_rows(&[2, 0, 2]).unwrap().slice_cols(1, 3).unwrap().exp().sum());
            check_unary(x.clone(), |v| v.sub(&v.tape().constant(w.clone())).unwrap().abs().clamp(0.0, 0.9).sum());
        }

        #[test]
        fn splitting_a_use_doubles_gradient(x in arb_matrix(2, 3)) {
            let t = Tape::new();
            let v = t.param(x.clone());
            let single = t.backward(v.exp().sum()).unwrap().wrt(v).unwrap();
            let t2 = Tape::new();
            let v2 = t2.param(x);
            let y = v2.exp().sum().add(&v2.exp().sum()).unwrap();
            let double = t2.backward(y).unwrap().wrt(v2).unwrap();
            for (a, b) in single.data().iter().zip(double.data()) {
                prop_assert!((2.0 * a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn forward_is_deterministic(x in arb_matrix(4, 3)) {
            let run = || {
                let t = Tape::new();
                let v = t.constant(x.clone());
                (*v.row_l2_normalize().matmul(&v.transpose()).unwrap().log_softmax_rows(None).unwrap().value()).clone()
            };
            prop_assert_eq!(run(), run());
        }
    }

    #[test]
    fn relu_gradient_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(4, 4, &mut rng);
        check_unary(x, |v| v.relu().mul(&v).unwrap().sum());
    }
}
