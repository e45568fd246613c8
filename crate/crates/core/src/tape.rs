//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records every operation in execution order, so operands always
//! precede their results. [`Tape::backward`] walks the record in reverse and
//! accumulates adjoints into every node that depends on a parameter.
//!
//! ```
//! use police::{Matrix, Tape};
//!
//! let mut tape = Tape::<f64>::new();
//! let w = tape.param(Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap());
//! let x = tape.constant(Matrix::from_rows(&[vec![3.0], vec![4.0]]).unwrap());
//! let y = tape.matmul(w, x).unwrap();
//! let loss = tape.sum(y);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(w).unwrap().data(), &[3.0, 4.0]);
//! ```

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, T),
    Activation(Var, Activation<T>),
    ColumnMax(Var, Vec<usize>),
    /// Signs are a detached constant.
    ScaleColumns(Var, Vec<T>),
    Sum(Var),
    MeanSquare(Var),
    SumSquares(Var),
    BceLogits(Var, Matrix<T>),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulNt(..) => "matmul_nt",
            Op::AddRow(..) => "add_row_broadcast",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Scale(..) => "scale",
            Op::Activation(..) => "activation",
            Op::ColumnMax(..) => "column_max_over_rows",
            Op::ScaleColumns(..) => "scale_columns",
            Op::Sum(..) => "sum",
            Op::MeanSquare(..) => "mean_square",
            Op::SumSquares(..) => "sum_squares",
            Op::BceLogits(..) => "bce_logits",
        }
    }
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
    needs_grad: bool,
    param: bool,
}

/// Append-only record of a computation.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of a node; zeros shaped like `like` when nothing reached it.
    pub fn get_or_zeros(&self, v: Var, like: (usize, usize)) -> Matrix<T> {
        self.get(v).cloned().unwrap_or_else(|| Matrix::zeros(like.0, like.1))
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Matrix<T>) -> Var {
        self.push_node(value, Op::Leaf, true, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push_node(value, Op::Leaf, false, false)
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> T {
        self.value(v).data()[0]
    }

    /// Operation names and output shapes in execution order.
    pub fn trace(&self) -> Vec<(&'static str, (usize, usize))> {
        self.nodes.iter().map(|n| (n.op.name(), n.value.shape())).collect()
    }

    fn push_node(&mut self, value: Matrix<T>, op: Op<T>, needs_grad: bool, param: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            param,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>, operands: &[Var]) -> Var {
        let needs_grad = operands.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push_node(value, op, needs_grad, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.push(value, Op::MatMulNt(a, b), &[a, b]))
    }

    /// Adds the `1×n` node `row` to every row of `a`.
    pub fn add_row_broadcast(&mut self, a: Var, row: Var) -> Result<Var> {
        let r = self.value(row);
        if r.rows() != 1 {
            return Err(Error::dims("add_row_broadcast", self.value(a).shape(), r.shape()));
        }
        let value = self.value(a).add_row_broadcast(r.data())?;
        Ok(self.push(value, Op::AddRow(a, row), &[a, row]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let value = self.value(a).scale(k);
        self.push(value, Op::Scale(a, k), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -T::one())
    }

    pub fn activation(&mut self, a: Var, act: Activation<T>) -> Result<Var> {
        act.validate()?;
        let value = self.value(a).map(|x| act.apply(x));
        Ok(self.push(value, Op::Activation(a, act), &[a]))
    }

    /// `1×n` row of column maxima; the adjoint goes to the lowest-index argmax row.
    pub fn column_max_over_rows(&mut self, a: Var) -> Result<Var> {
        let (max, arg) = self.value(a).column_max_over_rows()?;
        Ok(self.push(Matrix::row_vector(max), Op::ColumnMax(a, arg), &[a]))
    }

    /// Multiplies column `k` by the constant `signs[k] ∈ {−1, +1}`.
    pub fn scale_columns(&mut self, a: Var, signs: &[T]) -> Result<Var> {
        let value = self.value(a).scale_columns(signs)?;
        Ok(self.push(value, Op::ScaleColumns(a, signs.to_vec()), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Matrix::filled(1, 1, s), Op::Sum(a), &[a])
    }

    /// Mean of squared entries.
    pub fn mean_square(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let n = T::from_usize(m.len().max(1)).unwrap();
        let s = m.sum_squares() / n;
        self.push(Matrix::filled(1, 1, s), Op::MeanSquare(a), &[a])
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.value(a).sum_squares();
        self.push(Matrix::filled(1, 1, s), Op::SumSquares(a), &[a])
    }

    /// Mean binary cross-entropy of raw logits against `{0, 1}` targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Matrix<T>) -> Result<Var> {
        let z = self.value(logits);
        if z.shape() != targets.shape() {
            return Err(Error::dims("bce_with_logits", z.shape(), targets.shape()));
        }
        if let Some(i) = targets.data().iter().position(|&t| t != T::zero() && t != T::one()) {
            return Err(Error::Validation(format!(
                "binary cross-entropy target {} at entry {i} is not 0 or 1",
                targets.data()[i]
            )));
        }
        let n = T::from_usize(z.len().max(1)).unwrap();
        let total: T = z
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&z, &t)| softplus(z) - t * z)
            .sum();
        Ok(self.push(
            Matrix::filled(1, 1, total / n),
            Op::BceLogits(logits, targets.clone()),
            &[logits],
        ))
    }

    /// Backpropagates from a `1×1` loss node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got a {}x{} node",
                shape.0, shape.1
            )));
        }
        let mut grads: Vec<Option<Matrix<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::filled(1, 1, T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(&node.op, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        for (node, grad) in self.nodes.iter().zip(grads.iter_mut()) {
            if node.param && grad.is_none() {
                let (r, c) = node.value.shape();
                *grad = Some(Matrix::zeros(r, c));
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(
        &self,
        op: &Op<T>,
        g: &Matrix<T>,
        grads: &mut [Option<Matrix<T>>],
    ) -> Result<()> {
        let mut emit = |v: Var, contribution: Matrix<T>| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&contribution),
            slot @ None => *slot = Some(contribution),
        };
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    emit(*a, g.matmul_nt(self.value(*b))?);
                }
                if self.wants(*b) {
                    emit(*b, self.value(*a).matmul_tn(g)?);
                }
            }
            Op::MatMulNt(a, b) => {
                if self.wants(*a) {
                    emit(*a, g.matmul(self.value(*b))?);
                }
                if self.wants(*b) {
                    emit(*b, g.matmul_tn(self.value(*a))?);
                }
            }
            Op::AddRow(a, row) => {
                if self.wants(*a) {
                    emit(*a, g.clone());
                }
                if self.wants(*row) {
                    emit(*row, Matrix::row_vector(g.column_sums()));
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    emit(*a, g.clone());
                }
                if self.wants(*b) {
                    emit(*b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    emit(*a, g.clone());
                }
                if self.wants(*b) {
                    emit(*b, g.scale(-T::one()));
                }
            }
            Op::Scale(a, k) => emit(*a, g.scale(*k)),
            Op::Activation(a, act) => {
                let x = self.value(*a);
                emit(*a, g.zip_map(x, "activation", |g, x| g * act.derivative(x))?);
            }
            Op::ColumnMax(a, arg) => {
                let (rows, cols) = self.value(*a).shape();
                let mut d = Matrix::zeros(rows, cols);
                for (c, &r) in arg.iter().enumerate() {
                    d.set(r, c, g.get(0, c));
                }
                emit(*a, d);
            }
            Op::ScaleColumns(a, signs) => emit(*a, g.scale_columns(signs)?),
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                emit(*a, Matrix::filled(r, c, g.get(0, 0)));
            }
            Op::MeanSquare(a) => {
                let x = self.value(*a);
                let k = T::of(2.0) * g.get(0, 0) / T::from_usize(x.len().max(1)).unwrap();
                emit(*a, x.scale(k));
            }
            Op::SumSquares(a) => {
                let k = T::of(2.0) * g.get(0, 0);
                emit(*a, self.value(*a).scale(k));
            }
            Op::BceLogits(z, targets) => {
                let zv = self.value(*z);
                let k = g.get(0, 0) / T::from_usize(zv.len().max(1)).unwrap();
                emit(*z, zv.zip_map(targets, "bce_with_logits", |z, t| (sigmoid(z) - t) * k)?);
            }
        }
        Ok(())
    }
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_adjoints_match_hand_calculus() {
        // loss = sum(W x); dW_ij = x_j, dx_j = sum_i W_ij
        let mut tape = Tape::new();
        let w = tape.param(m(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let x = tape.param(m(&[&[5.0], &[-6.0]]));
        let y = tape.matmul(w, x).unwrap();
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap(), &m(&[&[5.0, -6.0], &[5.0, -6.0]]));
        assert_eq!(g.get(x).unwrap(), &m(&[&[4.0], &[6.0]]));
    }

    #[test]
    fn matmul_nt_adjoints_match_matmul_route() {
        let a = m(&[&[1.0, -2.0, 0.5], &[0.3, 4.0, -1.0]]);
        let b = m(&[&[0.0, 1.0, 2.0], &[-1.0, 0.5, 3.0]]);

        let mut t1 = Tape::new();
        let (a1, b1) = (t1.param(a.clone()), t1.param(b.clone()));
        let p = t1.matmul_nt(a1, b1).unwrap();
        let l1 = t1.sum_squares(p);
        let g1 = t1.backward(l1).unwrap();

        let mut t2 = Tape::new();
        let (a2, bt2) = (t2.param(a), t2.param(b.transpose()));
        let p = t2.matmul(a2, bt2).unwrap();
        let l2 = t2.sum_squares(p);
        let g2 = t2.backward(l2).unwrap();

        assert_eq!(g1.get(a1), g2.get(a2));
        assert_eq!(g1.get(b1).unwrap(), &g2.get(bt2).unwrap().transpose());
    }

    #[test]
    fn broadcast_adjoint_is_column_sum() {
        let mut tape = Tape::new();
        let a = tape.constant(m(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]));
        let b = tape.param(m(&[&[0.0, 0.0]]));
        let y = tape.add_row_broadcast(a, b).unwrap();
        let weights = tape.constant(m(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]));
        let prod = tape.sub(y, weights).unwrap();
        let loss = tape.sum(prod);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(b).unwrap(), &m(&[&[3.0, 3.0]]));
        assert!(g.get(a).is_none());
    }

    #[test]
    fn column_max_routes_to_lowest_argmax() {
        let mut tape = Tape::new();
        let a = tape.param(m(&[&[2.0, 1.0], &[2.0, 5.0]]));
        let mx = tape.column_max_over_rows(a).unwrap();
        let loss = tape.sum(mx);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(a).unwrap(), &m(&[&[1.0, 0.0], &[0.0, 1.0]]));
    }

    #[test]
    fn constant_loss_gives_zero_gradients() {
        let mut tape = Tape::new();
        let w = tape.param(m(&[&[1.0, 2.0]]));
        let c = tape.constant(m(&[&[3.0]]));
        let loss = tape.sum(c);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap(), &Matrix::zeros(1, 2));
    }

    #[test]
    fn non_scalar_loss_is_contract_error() {
        let mut tape = Tape::new();
        let w = tape.param(m(&[&[1.0, 2.0]]));
        assert!(matches!(tape.backward(w), Err(Error::Contract(_))));
    }

    #[test]
    fn activation_backward_uses_negative_branch_at_zero() {
        let mut tape = Tape::new();
        let x = tape.param(m(&[&[-1.0, 0.0, 2.0]]));
        let y = tape.activation(x, Activation::LeakyRelu(0.1)).unwrap();
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap(), &m(&[&[0.1, 0.1, 1.0]]));
    }

    #[test]
    fn sign_constants_are_detached() {
        let mut tape = Tape::new();
        let x = tape.param(m(&[&[1.0, -2.0]]));
        let y = tape.scale_columns(x, &[-1.0, 1.0]).unwrap();
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap(), &m(&[&[-1.0, 1.0]]));
        assert_eq!(tape.trace().len(), 3);
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        let build = |tape: &mut Tape<f64>, w: Var, which: u8| -> Var {
            let x = tape.constant(m(&[&[0.3, -1.2], &[2.0, 0.7]]));
            let h = tape.matmul_nt(x, w).unwrap();
            let a = tape.activation(h, Activation::LeakyRelu(0.05)).unwrap();
            let l1 = tape.mean_square(a);
            let l2 = tape.sum(a);
            match which {
                1 => l1,
                2 => l2,
                _ => tape.add(l1, l2).unwrap(),
            }
        };
        let w0 = m(&[&[0.5, -0.25], &[1.5, 0.75], &[-0.4, 0.1]]);
        let grad = |which| {
            let mut tape = Tape::new();
            let w = tape.param(w0.clone());
            let l = build(&mut tape, w, which);
            tape.backward(l).unwrap().get(w).unwrap().clone()
        };
        let sum = grad(1).add(&grad(2)).unwrap();
        assert!(sum.max_abs_diff(&grad(3)).unwrap() <= 1e-12);
    }

    #[test]
    fn bce_is_stable_and_matches_ln2() {
        let mut tape = Tape::new();
        let z = tape.param(m(&[&[0.0]]));
        let l = tape.bce_with_logits(z, &m(&[&[1.0]])).unwrap();
        assert!((tape.scalar(l) - std::f64::consts::LN_2).abs() < 1e-15);
        let big = tape.param(m(&[&[1e3, -1e3]]));
        let l = tape.bce_with_logits(big, &m(&[&[0.0, 1.0]])).unwrap();
        assert!((tape.scalar(l) - 1e3).abs() < 1e-9);
        let g = tape.backward(l).unwrap();
        assert!(g.get(big).unwrap().is_finite());
        assert!(tape.bce_with_logits(z, &m(&[&[0.5]])).is_err());
    }
}
