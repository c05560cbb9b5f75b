//! Primitive differentiable operators: elementwise arithmetic with
//! broadcasting, matrix product, axis reductions and shape manipulation.

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use super::tape::{Backward, BackwardCtx, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{numel, Real, Tensor};

/// For every element of a tensor shaped `target`, the flat index of the
/// element of `source` it reads under broadcasting. `source` may have lower
/// rank (leading axes are implied 1) and size-1 axes expand.
pub fn broadcast_index(target: &[usize], source: &[usize]) -> Result<Vec<usize>> {
    if source.len() > target.len() {
        return Err(Error::Shape(format!("cannot broadcast {source:?} to {target:?}")));
    }
    let offset = target.len() - source.len();
    let mut strides = vec![0usize; target.len()];
    let mut stride = 1;
    for (i, &dim) in source.iter().enumerate().rev() {
        let t = target[offset + i];
        if dim == t {
            strides[offset + i] = stride;
        } else if dim != 1 {
            return Err(Error::Shape(format!("cannot broadcast {source:?} to {target:?}")));
        }
        stride *= dim;
    }
    let total = numel(target);
    let mut out = Vec::with_capacity(total);
    let mut counter = vec![0usize; target.len()];
    let mut src = 0usize;
    for _ in 0..total {
        out.push(src);
        for axis in (0..target.len()).rev() {
            counter[axis] += 1;
            src += strides[axis];
            if counter[axis] < target[axis] {
                break;
            }
            src -= strides[axis] * counter[axis];
            counter[axis] = 0;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    fn name(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
        }
    }

    fn apply<T: Real>(self, a: T, b: T) -> T {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
        }
    }
}

struct Binary {
    op: BinaryOp,
    /// `None` when shapes are equal.
    index: Option<Vec<usize>>,
}

impl Binary {
    fn b_at<'a, T: Real>(&'a self, b: &'a Tensor<T>) -> impl Fn(usize) -> T + 'a {
        move |i| match &self.index {
            Some(idx) => b.data()[idx[i]],
            None => b.data()[i],
        }
    }

    fn reduce_to_b<T: Real>(&self, b_shape: &[usize], full: Vec<T>) -> Result<Tensor<T>> {
        match &self.index {
            None => Tensor::new(b_shape, full),
            Some(idx) => {
                let mut out = vec![T::zero(); numel(b_shape)];
                for (v, &j) in full.into_iter().zip(idx) {
                    out[j] = out[j] + v;
                }
                Tensor::new(b_shape, out)
            }
        }
    }
}

impl<T: Real> Backward<T> for Binary {
    fn name(&self) -> &'static str {
        self.op.name()
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let (a, b, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad.data());
        let bv = self.b_at(b);
        let ga = ctx.needs[0].then(|| {
            let data = match self.op {
                BinaryOp::Add | BinaryOp::Sub => g.to_vec(),
                BinaryOp::Mul => g.iter().enumerate().map(|(i, &g)| g * bv(i)).collect(),
                BinaryOp::Div => g.iter().enumerate().map(|(i, &g)| g / bv(i)).collect(),
            };
            Tensor::new(a.shape(), data)
        });
        let gb = ctx.needs[1].then(|| {
            let full: Vec<T> = match self.op {
                BinaryOp::Add => g.to_vec(),
                BinaryOp::Sub => g.iter().map(|&g| -g).collect(),
                BinaryOp::Mul => g.iter().zip(a.data()).map(|(&g, &a)| g * a).collect(),
                BinaryOp::Div => g
                    .iter()
                    .zip(a.data())
                    .enumerate()
                    .map(|(i, (&g, &a))| {
                        let b = bv(i);
                        -g * a / (b * b)
                    })
                    .collect(),
            };
            self.reduce_to_b(b.shape(), full)
        });
        Ok(vec![ga.transpose()?, gb.transpose()?])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum UnaryKind {
    Neg,
    Exp,
    Ln,
    Sqrt,
    AddScalar,
    MulScalar,
    MaxScalar,
}

struct Unary<T> {
    kind: UnaryKind,
    scalar: T,
}

impl<T: Real> Backward<T> for Unary<T> {
    fn name(&self) -> &'static str {
        match self.kind {
            UnaryKind::Neg => "neg",
            UnaryKind::Exp => "exp",
            UnaryKind::Ln => "ln",
            UnaryKind::Sqrt => "sqrt",
            UnaryKind::AddScalar => "add_scalar",
            UnaryKind::MulScalar => "mul_scalar",
            UnaryKind::MaxScalar => "max_scalar",
        }
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let (x, y, g) = (ctx.inputs[0].data(), ctx.output.data(), ctx.grad.data());
        let two = T::one() + T::one();
        let data: Vec<T> = (0..g.len())
            .map(|i| match self.kind {
                UnaryKind::Neg => -g[i],
                UnaryKind::Exp => g[i] * y[i],
                UnaryKind::Ln => g[i] / x[i],
                UnaryKind::Sqrt => g[i] / (two * y[i]),
                UnaryKind::AddScalar => g[i],
                UnaryKind::MulScalar => g[i] * self.scalar,
                UnaryKind::MaxScalar => {
                    if x[i] > self.scalar {
                        g[i]
                    } else {
                        T::zero()
                    }
                }
            })
            .collect();
        Ok(vec![Some(Tensor::new(ctx.inputs[0].shape(), data)?)])
    }

    fn decisions(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, hasher: &mut DefaultHasher) {
        if self.kind == UnaryKind::MaxScalar {
            for &v in inputs[0].data() {
                hasher.write_u8((v > self.scalar) as u8);
            }
        }
    }
}

struct MatMul {
    m: usize,
    k: usize,
    n: usize,
}

impl<T: Real> Backward<T> for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let (a, b, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad.data());
        let (m, k, n) = (self.m, self.k, self.n);
        let ga = if ctx.needs[0] {
            // dA = dC * B^T
            let mut out = vec![T::zero(); m * k];
            T::gemm(false, true, m, k, n, T::one(), g, b.data(), T::zero(), &mut out);
            Some(Tensor::new(a.shape(), out)?)
        } else {
            None
        };
        let gb = if ctx.needs[1] {
            // dB = A^T * dC
            let mut out = vec![T::zero(); k * n];
            T::gemm(true, false, k, n, m, T::one(), a.data(), g, T::zero(), &mut out);
            Some(Tensor::new(b.shape(), out)?)
        } else {
            None
        };
        Ok(vec![ga, gb])
    }
}

/// Splits a shape around `axis` into `(outer, len, inner)`.
fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::Shape(format!("axis {axis} out of range for {shape:?}")));
    }
    let len = shape[axis];
    if len == 0 {
        return Err(Error::Shape(format!("reduction over empty axis {axis}")));
    }
    Ok((numel(&shape[..axis]), len, numel(&shape[axis + 1..])))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    Max,
    /// Population variance (divides by the axis length).
    Variance,
}

struct Reduce {
    kind: Reduction,
    outer: usize,
    len: usize,
    inner: usize,
    /// Arg-max offsets along the axis (first index on ties).
    argmax: Vec<usize>,
}

impl<T: Real> Backward<T> for Reduce {
    fn name(&self) -> &'static str {
        match self.kind {
            Reduction::Sum => "sum",
            Reduction::Mean => "mean",
            Reduction::Max => "max",
            Reduction::Variance => "variance",
        }
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let x = ctx.inputs[0];
        let g = ctx.grad.data();
        let (outer, len, inner) = (self.outer, self.len, self.inner);
        let count = T::of(len as f64);
        let mut out = vec![T::zero(); x.len()];
        let xd = x.data();
        for o in 0..outer {
            for i in 0..inner {
                let r = o * inner + i;
                let at = |j: usize| (o * len + j) * inner + i;
                match self.kind {
                    Reduction::Sum => (0..len).for_each(|j| out[at(j)] = g[r]),
                    Reduction::Mean => (0..len).for_each(|j| out[at(j)] = g[r] / count),
                    Reduction::Max => out[at(self.argmax[r])] = g[r],
                    Reduction::Variance => {
                        let shift = xd[at(0)];
                        let mean = (0..len).map(|j| xd[at(j)] - shift).sum::<T>() / count;
                        let scale = (T::one() + T::one()) * g[r] / count;
                        (0..len).for_each(|j| out[at(j)] = scale * ((xd[at(j)] - shift) - mean));
                    }
                }
            }
        }
        Ok(vec![Some(Tensor::new(x.shape(), out)?)])
    }

    fn decisions(&self, _inputs: &[&Tensor<T>], _output: &Tensor<T>, hasher: &mut DefaultHasher) {
        for &j in &self.argmax {
            hasher.write_usize(j);
        }
    }
}

struct Reshape;

impl<T: Real> Backward<T> for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(ctx.grad.reshape(ctx.inputs[0].shape())?)])
    }
}

struct Concat {
    axis: usize,
}

impl<T: Real> Backward<T> for Concat {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let out_shape = ctx.output.shape();
        let outer = numel(&out_shape[..self.axis]);
        let out_row = numel(&out_shape[self.axis..]);
        let g = ctx.grad.data();
        let mut offset = 0;
        let mut grads = Vec::with_capacity(ctx.inputs.len());
        for (input, &need) in ctx.inputs.iter().zip(&ctx.needs) {
            let row = numel(&input.shape()[self.axis..]);
            if need {
                let mut data = Vec::with_capacity(input.len());
                for o in 0..outer {
                    let start = o * out_row + offset;
                    data.extend_from_slice(&g[start..start + row]);
                }
                grads.push(Some(Tensor::new(input.shape(), data)?));
            } else {
                grads.push(None);
            }
            offset += row;
        }
        Ok(grads)
    }
}

impl<T: Real> Tape<T> {
    /// Elementwise `a (op) b` where `b` broadcasts to the shape of `a`.
    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let index = if av.shape() == bv.shape() {
            None
        } else {
            Some(broadcast_index(av.shape(), bv.shape())?)
        };
        let node = Binary { op, index };
        if op == BinaryOp::Div {
            if bv.data().iter().any(|v| v.is_zero()) {
                return Err(Error::DivisionByZero { op: "div" });
            }
        }
        let data: Vec<T> = {
            let b_at = node.b_at(bv);
            av.data()
                .iter()
                .enumerate()
                .map(|(i, &x)| op.apply(x, b_at(i)))
                .collect()
        };
        let value = Tensor::new(av.shape(), data)?;
        self.push(value, &[a, b], Box::new(node))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Div, a, b)
    }

    fn unary(&mut self, x: Var, kind: UnaryKind, scalar: T, f: impl Fn(T) -> T) -> Result<Var> {
        let value = self.value(x).map(f);
        self.push(value, &[x], Box::new(Unary { kind, scalar }))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Neg, T::zero(), |v| -v)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Exp, T::zero(), T::exp)
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Ln, T::zero(), T::ln)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Sqrt, T::zero(), T::sqrt)
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Result<Var> {
        self.unary(x, UnaryKind::AddScalar, s, |v| v + s)
    }

    pub fn mul_scalar(&mut self, x: Var, s: T) -> Result<Var> {
        self.unary(x, UnaryKind::MulScalar, s, |v| v * s)
    }

    /// `max(x, s)` elementwise; the gradient passes where `x > s`.
    pub fn max_scalar(&mut self, x: Var, s: T) -> Result<Var> {
        self.unary(x, UnaryKind::MaxScalar, s, |v| if v > s { v } else { s })
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k, k2, n) = match (av.shape(), bv.shape()) {
            (&[m, k], &[k2, n]) => (m, k, k2, n),
            (sa, sb) => {
                return Err(Error::Shape(format!("matmul needs rank-2 operands, got {sa:?} and {sb:?}")))
            }
        };
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul inner dimensions differ: {:?} x {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(false, false, m, n, k, T::one(), av.data(), bv.data(), T::zero(), &mut out);
        let value = Tensor::new(&[m, n], out)?;
        self.push(value, &[a, b], Box::new(MatMul { m, k, n }))
    }

    /// Reduce over `axis`, removing it from the shape.
    pub fn reduce(&mut self, x: Var, kind: Reduction, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        let (outer, len, inner) = axis_split(xv.shape(), axis)?;
        let mut shape = xv.shape().to_vec();
        shape.remove(axis);
        let xd = xv.data();
        let count = T::of(len as f64);
        let mut out = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::new();
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| xd[(o * len + j) * inner + i];
                let v = match kind {
                    Reduction::Sum => (0..len).map(at).sum(),
                    Reduction::Mean => (0..len).map(at).sum::<T>() / count,
                    Reduction::Max => {
                        let mut best = 0;
                        for j in 1..len {
                            if at(j) > at(best) {
                                best = j;
                            }
                        }
                        argmax.push(best);
                        at(best)
                    }
                    Reduction::Variance => {
                        // shifted by the first slice so identical slices give exactly zero
                        let shift = at(0);
                        let mean = (0..len).map(|j| at(j) - shift).sum::<T>() / count;
                        (0..len)
                            .map(|j| {
                                let d = (at(j) - shift) - mean;
                                d * d
                            })
                            .sum::<T>()
                            / count
                    }
                };
                out.push(v);
            }
        }
        let value = Tensor::new(&shape, out)?;
        self.push(value, &[x], Box::new(Reduce { kind, outer, len, inner, argmax }))
    }

    /// Sum of every element, as a scalar.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let flat = self.reshape(x, &[n])?;
        self.reduce(flat, Reduction::Sum, 0)
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let flat = self.reshape(x, &[n])?;
        self.reduce(flat, Reduction::Mean, 0)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        self.push(value, &[x], Box::new(Reshape))
    }

    /// Concatenate along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::Shape(format!("concat axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::Shape(format!("concat of {base:?} and {s:?} along {axis}")));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let outer = numel(&base[..axis]);
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &x in xs {
                let v = self.value(x);
                let row = numel(&v.shape()[axis..]);
                data.extend_from_slice(&v.data()[o * row..(o + 1) * row]);
            }
        }
        let value = Tensor::new(&shape, data)?;
        self.push(value, xs, Box::new(Concat { axis }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    #[test]
    fn add_vectors() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2], &[1.0, 2.0]));
        let b = tape.constant(t(&[2], &[3.0, 4.0]));
        let c = tape.add(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn mul_by_one_is_identity() {
        let mut tape = Tape::<f32>::new();
        let data = vec![0.1f32, -3.7, 1e-30, 12345.678];
        let x = tape.constant(Tensor::new(&[4], data.clone()).unwrap());
        let y = tape.mul_scalar(x, 1.0).unwrap();
        assert_eq!(tape.value(y).data(), &data[..]);
    }

    #[test]
    fn division_by_zero_is_an_error() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2], &[1.0, 2.0]));
        let b = tape.constant(t(&[2], &[1.0, 0.0]));
        assert!(matches!(tape.div(a, b), Err(Error::DivisionByZero { .. })));
    }

    #[test]
    fn non_finite_results_name_the_operator() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1], &[-1.0]));
        match tape.ln(x) {
            Err(Error::NonFinite { op }) => assert_eq!(op, "ln"),
            other => panic!("expected NonFinite, got {:?}", other.map(|v| v.index())),
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2], &[1.0, 2.0]));
        let b = tape.constant(t(&[3], &[1.0, 2.0, 3.0]));
        assert!(matches!(tape.add(a, b), Err(Error::Shape(_))));
    }

    #[test]
    fn matmul_identity_and_dot() {
        let mut tape = Tape::new();
        let i = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let m = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let p = tape.matmul(i, m).unwrap();
        assert_eq!(tape.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);
        let r = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let c = tape.constant(t(&[2, 1], &[3.0, 4.0]));
        let d = tape.matmul(r, c).unwrap();
        assert_eq!(tape.value(d).data(), &[11.0]);
        let bad = tape.constant(t(&[3, 1], &[1.0, 2.0, 3.0]));
        assert!(tape.matmul(r, bad).is_err());
    }

    #[test]
    fn max_and_variance_of_two_values() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2], &[0.0, 2.0]));
        let m = tape.reduce(x, Reduction::Max, 0).unwrap();
        let v = tape.reduce(x, Reduction::Variance, 0).unwrap();
        assert_eq!(tape.value(m).item().unwrap(), 2.0);
        assert_eq!(tape.value(v).item().unwrap(), 1.0);
    }

    #[test]
    fn variance_of_identical_slices_is_zero() {
        let mut tape = Tape::new();
        // 0.1 + 0.1 + 0.1 divided by 3 is not 0.1 in binary
        let slice = [0.3, -1.2, 0.1];
        let data: Vec<f64> = slice.iter().cycle().take(9).copied().collect();
        let x = tape.constant(t(&[3, 3], &data));
        let v = tape.reduce(x, Reduction::Variance, 0).unwrap();
        assert!(tape.value(v).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn max_backward_routes_to_first_tie() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[3], &[5.0, 5.0, 1.0]));
        let m = tape.reduce(x, Reduction::Max, 0).unwrap();
        let grads = tape.backward(m).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn empty_axis_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::zeros(&[2, 0]));
        assert!(tape.reduce(x, Reduction::Sum, 1).is_err());
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2, 2], &[1.0, -2.0, 3.0, 0.5]));
        let s = tape.sum_all(x).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn bilinear_form_gradient() {
        let mut tape = Tape::new();
        let x_data = [0.5, -1.0, 2.0];
        let w = tape.param(t(&[3], &[1.0, 2.0, 3.0]));
        let x = tape.constant(t(&[3], &x_data));
        let p = tape.mul(w, x).unwrap();
        let loss = tape.sum_all(p).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &x_data);
    }

    #[test]
    fn gradients_accumulate_over_paths() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = tape.add(x, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item().unwrap(), 2.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2], &[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn tape_reset_allows_reuse() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(1.0));
        let _ = tape.exp(x).unwrap();
        tape.reset();
        assert!(tape.is_empty());
        let x = tape.param(Tensor::scalar(0.0));
        let y = tape.exp(x).unwrap();
        assert_eq!(tape.backward(y).unwrap().get(x).unwrap().item().unwrap(), 1.0);
    }

    #[test]
    fn broadcast_bias_over_rows() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 3], &[0.0; 6]));
        let b = tape.param(t(&[3], &[1.0, 2.0, 3.0]));
        let c = tape.add(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let loss = tape.sum_all(c).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(b).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn concat_then_split_gradients() {
        let mut tape = Tape::new();
        let a = tape.param(t(&[1, 1, 2], &[1.0, 2.0]));
        let b = tape.param(t(&[1, 2, 2], &[3.0, 4.0, 5.0, 6.0]));
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.shape(c), &[1, 3, 2]);
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let w = tape.constant(t(&[1, 3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let p = tape.mul(c, w).unwrap();
        let loss = tape.sum_all(p).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[1.0, 2.0]);
        assert_eq!(grads.get(b).unwrap().data(), &[3.0, 4.0, 5.0, 6.0]);
    }
}
