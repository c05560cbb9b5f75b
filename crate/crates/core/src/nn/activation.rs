use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use crate::autodiff::{Backward, BackwardCtx, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{softmax_in_place, Real, Tensor};

struct Relu;

impl<T: Real> Backward<T> for Relu {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let x = ctx.inputs[0];
        let data = x
            .data()
            .iter()
            .zip(ctx.grad.data())
            .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
            .collect();
        Ok(vec![Some(Tensor::new(x.shape(), data)?)])
    }

    fn decisions(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, hasher: &mut DefaultHasher) {
        for &v in inputs[0].data() {
            hasher.write_u8((v > T::zero()) as u8);
        }
    }
}

pub fn relu<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let value = tape.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
    tape.push(value, &[x], Box::new(Relu))
}

struct Sigmoid;

impl<T: Real> Backward<T> for Sigmoid {
    fn name(&self) -> &'static str {
        "sigmoid"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let y = ctx.output;
        let data = y
            .data()
            .iter()
            .zip(ctx.grad.data())
            .map(|(&y, &g)| g * y * (T::one() - y))
            .collect();
        Ok(vec![Some(Tensor::new(y.shape(), data)?)])
    }
}

pub(crate) fn sigmoid_scalar<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Logistic sigmoid, evaluated without overflow for large `|x|`.
pub fn sigmoid<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let value = tape.value(x).map(sigmoid_scalar);
    tape.push(value, &[x], Box::new(Sigmoid))
}

struct Softmax;

impl<T: Real> Backward<T> for Softmax {
    fn name(&self) -> &'static str {
        "softmax"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let y = ctx.output;
        let cols = y.shape()[1];
        let (yd, g) = (y.data(), ctx.grad.data());
        let mut out = vec![T::zero(); y.len()];
        for (r, row) in out.chunks_mut(cols).enumerate() {
            let ys = &yd[r * cols..(r + 1) * cols];
            let gs = &g[r * cols..(r + 1) * cols];
            let dot: T = ys.iter().zip(gs).map(|(&a, &b)| a * b).sum();
            for j in 0..cols {
                row[j] = ys[j] * (gs[j] - dot);
            }
        }
        Ok(vec![Some(Tensor::new(y.shape(), out)?)])
    }
}

/// Row-wise softmax of `[N, K]` logits.
pub fn softmax<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let xv = tape.value(x);
    if xv.rank() != 2 {
        return Err(Error::Shape(format!("softmax expects [N, K], got {:?}", xv.shape())));
    }
    let value = xv.softmax_rows()?;
    tape.push(value, &[x], Box::new(Softmax))
}

struct SoftmaxCrossEntropy<T> {
    probs: Tensor<T>,
    labels: Tensor<T>,
}

impl<T: Real> Backward<T> for SoftmaxCrossEntropy<T> {
    fn name(&self) -> &'static str {
        "softmax_cross_entropy"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let n = T::of(self.probs.shape()[0] as f64);
        let g = ctx.grad.item()?;
        let data = self
            .probs
            .data()
            .iter()
            .zip(self.labels.data())
            .map(|(&p, &y)| g * (p - y) / n)
            .collect();
        Ok(vec![Some(Tensor::new(self.probs.shape(), data)?)])
    }
}

/// Mean over the batch of `-sum(y * ln softmax(logits))` for one-hot `labels`.
pub fn softmax_cross_entropy<T: Real>(tape: &mut Tape<T>, logits: Var, labels: &Tensor<T>) -> Result<Var> {
    let lv = tape.value(logits);
    let (n, k) = match lv.shape() {
        &[n, k] if n > 0 => (n, k),
        s => return Err(Error::Shape(format!("logits must be [N>0, K], got {s:?}"))),
    };
    labels.expect_shape(lv.shape())?;
    for row in labels.data().chunks(k) {
        let ones = row.iter().filter(|&&v| v == T::one()).count();
        let zeros = row.iter().filter(|&&v| v == T::zero()).count();
        if ones != 1 || zeros != k - 1 {
            return Err(Error::InvalidArgument(format!("label row {row:?} is not one-hot")));
        }
    }
    let mut loss = T::zero();
    let mut probs = lv.data().to_vec();
    for (r, row) in lv.data().chunks(k).enumerate() {
        // log-sum-exp with max shift
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        let target = labels.data()[r * k..(r + 1) * k]
            .iter()
            .position(|&v| v == T::one())
            .expect("validated one-hot");
        loss = loss + lse - row[target];
        softmax_in_place(&mut probs[r * k..(r + 1) * k]);
    }
    let value = Tensor::scalar(loss / T::of(n as f64));
    let op = SoftmaxCrossEntropy {
        probs: Tensor::new(lv.shape(), probs)?,
        labels: labels.clone(),
    };
    tape.push(value, &[logits], Box::new(op))
}

/// Fully connected layer `x W + b` with `x: [N, in]`, `W: [in, out]`, `b: [out]`.
pub fn dense<T: Real>(tape: &mut Tape<T>, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let xw = tape.matmul(x, weight)?;
    tape.add(xw, bias)
}
