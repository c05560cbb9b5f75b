use crate::autodiff::{Backward, BackwardCtx, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

use super::Mode;

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

/// Per-channel batch statistics observed in training mode. `var` is the
/// population variance over `(N, H, W)`.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> BatchStats<T> {
    /// `running <- momentum * running + (1 - momentum) * batch`.
    pub fn update_running(&self, running_mean: &mut Tensor<T>, running_var: &mut Tensor<T>) {
        let m = T::of(BN_MOMENTUM);
        let rest = T::one() - m;
        for (r, &b) in running_mean.data_mut().iter_mut().zip(&self.mean) {
            *r = m * *r + rest * b;
        }
        for (r, &b) in running_var.data_mut().iter_mut().zip(&self.var) {
            *r = m * *r + rest * b;
        }
    }
}

/// `(N, C, H*W)` view of a rank-2 `[N, C]` or rank-4 `[N, C, H, W]` tensor.
fn layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [n, c] => Ok((n, c, 1)),
        [n, c, h, w] => Ok((n, c, h * w)),
        _ => Err(Error::Shape(format!("batch_norm expects rank 2 or 4, got {shape:?}"))),
    }
}

struct BatchNorm<T> {
    mode: Mode,
    mean: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Real> Backward<T> for BatchNorm<T> {
    fn name(&self) -> &'static str {
        "batch_norm"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let (x, gamma) = (ctx.inputs[0], ctx.inputs[1]);
        let (n, c, plane) = layout(x.shape())?;
        let (xv, g, gv) = (x.data(), ctx.grad.data(), gamma.data());
        let count = T::of((n * plane) as f64);
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        let at = |i: usize, ch: usize| (i * c + ch) * plane;
        for ch in 0..c {
            let (mean, inv) = (self.mean[ch], self.inv_std[ch]);
            for i in 0..n {
                let base = at(i, ch);
                for p in 0..plane {
                    let xhat = (xv[base + p] - mean) * inv;
                    dgamma[ch] = dgamma[ch] + g[base + p] * xhat;
                    dbeta[ch] = dbeta[ch] + g[base + p];
                }
            }
        }
        let dx = if ctx.needs[0] {
            let mut dx = vec![T::zero(); x.len()];
            for ch in 0..c {
                let (mean, inv) = (self.mean[ch], self.inv_std[ch]);
                let scale = gv[ch] * inv;
                for i in 0..n {
                    let base = at(i, ch);
                    for p in 0..plane {
                        let j = base + p;
                        dx[j] = match self.mode {
                            Mode::Eval => g[j] * scale,
                            Mode::Train => {
                                let xhat = (xv[j] - mean) * inv;
                                scale * (g[j] - dbeta[ch] / count - xhat * dgamma[ch] / count)
                            }
                        };
                    }
                }
            }
            Some(Tensor::new(x.shape(), dx)?)
        } else {
            None
        };
        Ok(vec![
            dx,
            Some(Tensor::new(&[c], dgamma)?),
            Some(Tensor::new(&[c], dbeta)?),
        ])
    }
}

/// Batch normalisation over `(N, H, W)` per channel. In training mode the
/// batch statistics are used and returned so the caller can fold them into
/// the running estimates; in evaluation mode the running estimates are used.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    mode: Mode,
) -> Result<(Var, Option<BatchStats<T>>)> {
    let xv = tape.value(x);
    let (n, c, plane) = layout(xv.shape())?;
    if n == 0 {
        return Err(Error::Shape("batch_norm on an empty batch".into()));
    }
    for t in [tape.value(gamma), tape.value(beta), running_mean, running_var] {
        t.expect_shape(&[c])?;
    }
    let eps = T::of(BN_EPS);
    let count = T::of((n * plane) as f64);
    let data = xv.data();
    let at = |i: usize, ch: usize| (i * c + ch) * plane;
    let (mean, var) = match mode {
        Mode::Eval => (running_mean.data().to_vec(), running_var.data().to_vec()),
        Mode::Train => {
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut s = T::zero();
                for i in 0..n {
                    s = s + data[at(i, ch)..at(i, ch) + plane].iter().copied().sum::<T>();
                }
                let m = s / count;
                let mut v = T::zero();
                for i in 0..n {
                    for &x in &data[at(i, ch)..at(i, ch) + plane] {
                        v = v + (x - m) * (x - m);
                    }
                }
                mean[ch] = m;
                var[ch] = v / count;
            }
            (mean, var)
        }
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let (gv, bv) = (tape.value(gamma).data(), tape.value(beta).data());
    let mut out = vec![T::zero(); data.len()];
    for i in 0..n {
        for ch in 0..c {
            let base = at(i, ch);
            let scale = gv[ch] * inv_std[ch];
            for p in 0..plane {
                out[base + p] = (data[base + p] - mean[ch]) * scale + bv[ch];
            }
        }
    }
    let value = Tensor::new(xv.shape(), out)?;
    let stats = (mode == Mode::Train).then(|| BatchStats {
        mean: mean.clone(),
        var,
    });
    let op = BatchNorm { mode, mean, inv_std };
    let y = tape.push(value, &[x, gamma, beta], Box::new(op))?;
    Ok((y, stats))
}
