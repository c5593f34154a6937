//! Reverse-mode automatic differentiation at matrix-operation granularity.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s in creation
//! order, which is a topological order by construction. [`Tape::backward`]
//! walks that record once in reverse, accumulating adjoints into each
//! node's inputs.
//!
//! ```
//! use degp_core::ndcore::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Tensor::vector(vec![3.0, 4.0]));
//! let y = x.square().sum();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(tape.value(y).item().unwrap(), 25.0);
//! assert_eq!(grads.wrt(x).data(), &[6.0, 8.0]);
//! ```

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::ndcore::linalg::{kron_identity_solve, Cholesky};
use crate::ndcore::tensor::{gemm_nt, gemm_tn, Tensor};

#[derive(Clone)]
enum Op {
    Leaf,
    Const,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    AddRow(usize, usize),
    Relu(usize),
    Square(usize),
    Log(usize),
    Exp(usize),
    Sum(usize),
    SumRows(usize),
    LogSoftmaxRows(usize),
    SliceRows(usize, usize),
    SliceCols(usize, usize, usize),
    ConcatRows(Vec<usize>),
    Reshape(usize),
    Transpose(usize),
    ScaleBy(usize, usize),
    KronSolveRows(usize, Rc<Cholesky>, usize),
    LogDetPd(usize, Rc<Tensor>),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Operation record for one differentiable computation.
///
/// A tape is single-threaded; build one per training step.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.tape.value(*self).shape())
    }
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient with respect to `v`, zero when the output does not depend on it.
    pub fn wrt(&self, v: Var<'_>) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.id]))
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

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Const, false)
    }

    pub fn value(&self, v: Var<'_>) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[v.id].value)
    }

    fn rg(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn unary(&self, a: Var<'_>, value: Tensor, op: Op) -> Var<'_> {
        let rg = self.rg(a.id);
        self.push(value, op, rg)
    }

    fn binary(&self, a: Var<'_>, b: Var<'_>, value: Tensor, op: Op) -> Var<'_> {
        let rg = self.rg(a.id) || self.rg(b.id);
        self.push(value, op, rg)
    }

    /// Reverse pass from a single-element output.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let out = &nodes[output.id];
        if out.value.numel() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar output, got shape {:?}",
                out.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[output.id] = Some(Tensor::full(out.value.shape(), 1.0));

        for id in (0..=output.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                grads[id] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let need = |i: usize| nodes[i].requires_grad;
            let val = |i: usize| -> &Tensor { &nodes[i].value };
            match &node.op {
                Op::Leaf | Op::Const => {}
                Op::MatMul(a, b) => {
                    let (m, k) = val(*a).dims2()?;
                    let n = val(*b).cols();
                    if need(*a) {
                        let mut ga = vec![0.0; m * k];
                        gemm_nt(m, n, k, g.data(), val(*b).data(), &mut ga, false);
                        accumulate(&mut grads, *a, Tensor::matrix(m, k, ga)?)?;
                    }
                    if need(*b) {
                        let mut gb = vec![0.0; k * n];
                        gemm_tn(k, m, n, val(*a).data(), g.data(), &mut gb, false);
                        accumulate(&mut grads, *b, Tensor::matrix(k, n, gb)?)?;
                    }
                }
                Op::Add(a, b) => {
                    if need(*a) {
                        accumulate(&mut grads, *a, g.clone())?;
                    }
                    if need(*b) {
                        accumulate(&mut grads, *b, g)?;
                    }
                }
                Op::Sub(a, b) => {
                    if need(*a) {
                        accumulate(&mut grads, *a, g.clone())?;
                    }
                    if need(*b) {
                        accumulate(&mut grads, *b, g.scale(-1.0))?;
                    }
                }
                Op::Mul(a, b) => {
                    if need(*a) {
                        accumulate(&mut grads, *a, g.hadamard(val(*b))?)?;
                    }
                    if need(*b) {
                        accumulate(&mut grads, *b, g.hadamard(val(*a))?)?;
                    }
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.scale(*c))?,
                Op::AddScalar(a) => accumulate(&mut grads, *a, g)?,
                Op::AddRow(a, r) => {
                    if need(*r) {
                        let gr = g.sum_rows()?.into_shape(val(*r).shape())?;
                        accumulate(&mut grads, *r, gr)?;
                    }
                    if need(*a) {
                        accumulate(&mut grads, *a, g)?;
                    }
                }
                Op::Relu(a) => {
                    let ga = g.zip_map(val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 })?;
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Square(a) => {
                    let ga = g.zip_map(val(*a), |gv, x| 2.0 * x * gv)?;
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Log(a) => {
                    let ga = g.zip_map(val(*a), |gv, x| gv / x)?;
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Exp(a) => {
                    let ga = g.hadamard(&node.value)?;
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Sum(a) => {
                    let gv = g.item()?;
                    accumulate(&mut grads, *a, Tensor::full(val(*a).shape(), gv))?;
                }
                Op::SumRows(a) => {
                    let (r, c) = val(*a).dims2()?;
                    let mut ga = Vec::with_capacity(r * c);
                    for _ in 0..r {
                        ga.extend_from_slice(g.data());
                    }
                    accumulate(&mut grads, *a, Tensor::matrix(r, c, ga)?)?;
                }
                Op::LogSoftmaxRows(a) => {
                    // d/dx (x - lse(x)) = g - softmax * sum(g)
                    let (r, c) = node.value.dims2()?;
                    let mut ga = g.into_data();
                    for i in 0..r {
                        let out_row = node.value.row(i);
                        let g_row = &mut ga[i * c..(i + 1) * c];
                        let gs: f64 = g_row.iter().sum();
                        for (gv, lp) in g_row.iter_mut().zip(out_row) {
                            *gv -= lp.exp() * gs;
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::matrix(r, c, ga)?)?;
                }
                Op::SliceRows(a, start) => {
                    let (_, c) = val(*a).dims2()?;
                    let mut ga = Tensor::zeros(val(*a).shape());
                    let off = start * c;
                    ga.data_mut()[off..off + g.numel()].copy_from_slice(g.data());
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::SliceCols(a, start, end) => {
                    let (r, c) = val(*a).dims2()?;
                    let w = end - start;
                    let mut ga = Tensor::zeros(&[r, c]);
                    for i in 0..r {
                        ga.data_mut()[i * c + start..i * c + end]
                            .copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                    }
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let len = val(p).numel();
                        if need(p) {
                            let gp = Tensor::new(
                                val(p).shape().to_vec(),
                                g.data()[off..off + len].to_vec(),
                            )?;
                            accumulate(&mut grads, p, gp)?;
                        }
                        off += len;
                    }
                }
                Op::Reshape(a) => {
                    accumulate(&mut grads, *a, g.into_shape(val(*a).shape())?)?;
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()?)?,
                Op::ScaleBy(a, s) => {
                    let sv = val(*s).item()?;
                    if need(*s) {
                        let gs = g.dot(val(*a))?;
                        accumulate(&mut grads, *s, Tensor::full(val(*s).shape(), gs))?;
                    }
                    if need(*a) {
                        accumulate(&mut grads, *a, g.scale(sv))?;
                    }
                }
                Op::KronSolveRows(a, chol, c) => {
                    // The operator is symmetric, so its adjoint is itself.
                    let ga = kron_identity_solve(chol, &g.transpose()?, *c)?.transpose()?;
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::LogDetPd(a, inv) => {
                    let gv = g.item()?;
                    accumulate(&mut grads, *a, inv.scale(gv))?;
                }
            }
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: usize, g: Tensor) -> Result<()> {
    match &mut grads[id] {
        Some(existing) => existing.axpy(1.0, &g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(self) -> usize {
        self.id
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    pub fn value(self) -> Rc<Tensor> {
        self.tape.value(self)
    }

    pub fn shape(self) -> Vec<usize> {
        self.tape.value(self).shape().to_vec()
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.value().matmul(&other.value())?;
        Ok(self.tape.binary(self, other, v, Op::MatMul(self.id, other.id)))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.value().add(&other.value())?;
        Ok(self.tape.binary(self, other, v, Op::Add(self.id, other.id)))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.value().sub(&other.value())?;
        Ok(self.tape.binary(self, other, v, Op::Sub(self.id, other.id)))
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.value().hadamard(&other.value())?;
        Ok(self.tape.binary(self, other, v, Op::Mul(self.id, other.id)))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let v = self.value().scale(c);
        self.tape.unary(self, v, Op::Scale(self.id, c))
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let v = self.value().map(|x| x + c);
        self.tape.unary(self, v, Op::AddScalar(self.id))
    }

    /// Adds a `(1, c)` or `(c,)` row to every row of an `(r, c)` matrix.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        let v = self.value().add_row(&row.value())?;
        Ok(self.tape.binary(self, row, v, Op::AddRow(self.id, row.id)))
    }

    pub fn relu(self) -> Var<'t> {
        let v = self.value().map(|x| x.max(0.0));
        self.tape.unary(self, v, Op::Relu(self.id))
    }

    pub fn square(self) -> Var<'t> {
        let v = self.value().map(|x| x * x);
        self.tape.unary(self, v, Op::Square(self.id))
    }

    pub fn ln(self) -> Var<'t> {
        let v = self.value().map(f64::ln);
        self.tape.unary(self, v, Op::Log(self.id))
    }

    pub fn exp(self) -> Var<'t> {
        let v = self.value().map(f64::exp);
        self.tape.unary(self, v, Op::Exp(self.id))
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(self) -> Var<'t> {
        let v = Tensor::scalar(self.value().sum());
        self.tape.unary(self, v, Op::Sum(self.id))
    }

    /// Column sums: `(r, c) -> (1, c)`.
    pub fn sum_rows(self) -> Result<Var<'t>> {
        let v = self.value().sum_rows()?;
        Ok(self.tape.unary(self, v, Op::SumRows(self.id)))
    }

    /// Row-wise `x - logsumexp(x)`.
    pub fn log_softmax_rows(self) -> Result<Var<'t>> {
        let x = self.value();
        let (r, c) = x.dims2()?;
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = x.row(i);
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|v| v - lse));
        }
        let v = Tensor::matrix(r, c, out)?;
        Ok(self.tape.unary(self, v, Op::LogSoftmaxRows(self.id)))
    }

    pub fn slice_rows(self, start: usize, end: usize) -> Result<Var<'t>> {
        let v = self.value().slice_rows(start, end)?;
        Ok(self.tape.unary(self, v, Op::SliceRows(self.id, start)))
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'t>> {
        let v = self.value().slice_cols(start, end)?;
        Ok(self.tape.unary(self, v, Op::SliceCols(self.id, start, end)))
    }

    pub fn concat_rows(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat_rows of nothing"))?;
        let tape = first.tape;
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
        let v = Tensor::concat_rows(&refs)?;
        let rg = parts.iter().any(|p| tape.rg(p.id));
        let ids = parts.iter().map(|p| p.id).collect();
        Ok(tape.push(v, Op::ConcatRows(ids), rg))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let v = self.value().reshape(shape)?;
        Ok(self.tape.unary(self, v, Op::Reshape(self.id)))
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let v = self.value().transpose()?;
        Ok(self.tape.unary(self, v, Op::Transpose(self.id)))
    }

    /// Multiplies every element by the single-element variable `s`.
    pub fn scale_by(self, s: Var<'t>) -> Result<Var<'t>> {
        let sv = s.value().item()?;
        let v = self.value().scale(sv);
        Ok(self.tape.binary(self, s, v, Op::ScaleBy(self.id, s.id)))
    }

    /// Applies `(B^{-1} kron I_c)` to each row of a `(k, n*c)` matrix, with
    /// the output index varying fastest inside a row. `B` is given by its
    /// Cholesky factor and is treated as a constant.
    pub fn kron_solve_rows(self, chol: Rc<Cholesky>, c: usize) -> Result<Var<'t>> {
        let v = kron_identity_solve(&chol, &self.value().transpose()?, c)?.transpose()?;
        Ok(self.tape.unary(self, v, Op::KronSolveRows(self.id, chol, c)))
    }

    /// `log det A` of a symmetric positive-definite matrix; the adjoint is
    /// `A^{-1}`.
    pub fn logdet_pd(self) -> Result<Var<'t>> {
        let a = self.value();
        let chol = Cholesky::new(&a)?;
        let v = Tensor::scalar(chol.logdet());
        let inv = Rc::new(chol.inverse());
        Ok(self.tape.unary(self, v, Op::LogDetPd(self.id, inv)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    /// Compares the tape gradient of `f` at `x0` to central differences.
    fn check_grad<F>(x0: &Tensor, f: F, tol: f64)
    where
        F: for<'t> Fn(Var<'t>) -> Var<'t>,
    {
        let tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let y = f(x);
        let g = tape.backward(y).unwrap().wrt(x);
        let h = 1e-5;
        let eval = |t: Tensor| {
            let tape = Tape::new();
            let x = tape.constant(t);
            let y = f(x);
            tape.value(y).item().unwrap()
        };
        for i in 0..x0.numel() {
            let mut p = x0.clone();
            p.data_mut()[i] += h;
            let mut m = x0.clone();
            m.data_mut()[i] -= h;
            let fd = (eval(p) - eval(m)) / (2.0 * h);
            let an = g.data()[i];
            let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
            assert!(err < tol, "component {i}: fd {fd} vs tape {an} (rel {err})");
        }
    }

    #[test]
    fn relu_definition() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        assert_eq!(tape.value(x.relu()).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn sum_of_squares_and_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![3.0, 4.0]));
        let y = x.square().sum();
        assert_eq!(tape.value(y).item().unwrap(), 25.0);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).data(), &[6.0, 8.0]);
    }

    #[test]
    fn constant_output_has_zero_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let c = tape.constant(Tensor::scalar(5.0));
        let y = c.scale(2.0);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x.square()), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn matmul_shape_error() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]));
        assert!(a.matmul(a).is_err());
    }

    #[test]
    fn matmul_trace_composite_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w0 = rand_t(&[3, 4], &mut rng);
        let a = rand_t(&[4, 3], &mut rng);
        check_grad(
            &w0,
            |w| {
                let a = w.tape().constant(a.clone());
                // sum((W A) .* (W A)) + sum(W)
                let p = w.matmul(a).unwrap();
                p.mul(p).unwrap().sum().add(w.sum()).unwrap()
            },
            1e-6,
        );
    }

    #[test]
    fn every_primitive_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x0 = rand_t(&[3, 4], &mut rng);
        let row = rand_t(&[1, 4], &mut rng);
        let b = rand_t(&[4, 2], &mut rng);
        let tol = 1e-5;
        check_grad(&x0, |x| x.exp().sum(), tol);
        check_grad(&x0, |x| x.square().add_scalar(1.0).ln().sum(), tol);
        check_grad(&x0, |x| x.relu().square().sum(), tol);
        check_grad(&x0, |x| x.scale(-3.0).sub(x.square()).unwrap().sum(), tol);
        check_grad(
            &x0,
            |x| x.add_row(x.tape().constant(row.clone())).unwrap().square().sum(),
            tol,
        );
        check_grad(
            &row,
            |r| {
                let base = r.tape().constant(x0.clone());
                base.add_row(r).unwrap().exp().sum()
            },
            tol,
        );
        check_grad(&x0, |x| x.sum_rows().unwrap().square().sum(), tol);
        check_grad(
            &x0,
            |x| {
                let w = x.tape().constant(x0.map(|v| v * 0.7 + 0.1));
                x.log_softmax_rows().unwrap().mul(w).unwrap().sum()
            },
            tol,
        );
        check_grad(&x0, |x| x.slice_rows(1, 3).unwrap().square().sum(), tol);
        check_grad(&x0, |x| x.slice_cols(1, 3).unwrap().exp().sum(), tol);
        check_grad(
            &x0,
            |x| {
                Var::concat_rows(&[x, x.slice_rows(0, 1).unwrap()])
                    .unwrap()
                    .exp()
                    .sum()
            },
            tol,
        );
        check_grad(
            &x0,
            |x| {
                x.reshape(&[2, 6])
                    .unwrap()
                    .transpose()
                    .unwrap()
                    .matmul(x.tape().constant(Tensor::full(&[2, 1], 0.5)))
                    .unwrap()
                    .square()
                    .sum()
            },
            tol,
        );
        check_grad(
            &x0,
            |x| x.matmul(x.tape().constant(b.clone())).unwrap().square().sum(),
            tol,
        );
        check_grad(
            &Tensor::scalar(0.3),
            |s| {
                let base = s.tape().constant(x0.clone());
                base.scale_by(s.exp()).unwrap().log_softmax_rows().unwrap().sum()
            },
            tol,
        );
    }

    #[test]
    fn logdet_and_kron_solve_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g0 = rand_t(&[3, 5], &mut rng);
        check_grad(
            &g0,
            |g| {
                let gram = g.matmul(g.transpose().unwrap()).unwrap();
                let id = g.tape().constant(Tensor::eye(3));
                gram.add(id).unwrap().logdet_pd().unwrap()
            },
            1e-5,
        );
        let a = rand_t(&[3, 3], &mut rng);
        let mut bmat = a.matmul(&a.transpose().unwrap()).unwrap();
        for i in 0..3 {
            let v = bmat.at(i, i) + 1.0;
            bmat.set(i, i, v);
        }
        let chol = Rc::new(Cholesky::new(&bmat).unwrap());
        let v0 = rand_t(&[2, 6], &mut rng);
        check_grad(
            &v0,
            |v| {
                let s = v.kron_solve_rows(chol.clone(), 2).unwrap();
                s.mul(v).unwrap().sum().add(s.sum()).unwrap()
            },
            1e-5,
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn composite_gradients_match_fd(seed in any::<u64>(), r in 1usize..5, c in 1usize..5) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x0 = rand_t(&[r, c], &mut rng);
                let w = rand_t(&[c, 3], &mut rng);
                check_grad(&x0, |x| {
                    let w = x.tape().constant(w.clone());
                    let h = x.matmul(w).unwrap();
                    h.log_softmax_rows().unwrap().sum().add(h.exp().sum()).unwrap()
                }, 1e-5);
            }
        }
    }
}
