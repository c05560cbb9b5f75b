use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use crate::autodiff::{Backward, BackwardCtx, Reduction, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

struct MaxPool2 {
    /// Flat input index of each output's window maximum.
    argmax: Vec<usize>,
}

impl<T: Real> Backward<T> for MaxPool2 {
    fn name(&self) -> &'static str {
        "maxpool2x2"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let mut dx = vec![T::zero(); ctx.inputs[0].len()];
        for (&src, &g) in self.argmax.iter().zip(ctx.grad.data()) {
            dx[src] = dx[src] + g;
        }
        Ok(vec![Some(Tensor::new(ctx.inputs[0].shape(), dx)?)])
    }

    fn decisions(&self, _inputs: &[&Tensor<T>], _output: &Tensor<T>, hasher: &mut DefaultHasher) {
        for &i in &self.argmax {
            hasher.write_usize(i);
        }
    }
}

/// 2x2 max pooling with stride 2. Ties go to the first element in row-major
/// window order.
pub fn maxpool2x2<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let xv = tape.value(x);
    let (n, c, h, w) = xv.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("maxpool2x2 needs even spatial dims, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let data = xv.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let first = base + 2 * y * w + 2 * x;
                let mut best = first;
                for cand in [first + 1, first + w, first + w + 1] {
                    if data[cand] > data[best] {
                        best = cand;
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    let value = Tensor::new(&[n, c, oh, ow], out)?;
    tape.push(value, &[x], Box::new(MaxPool2 { argmax }))
}

/// Mean over each channel's spatial plane: `[N, C, H, W] -> [N, C]`.
pub fn global_avg_pool<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let (n, c, h, w) = tape.value(x).dims4()?;
    let flat = tape.reshape(x, &[n, c, h * w])?;
    tape.reduce(flat, Reduction::Mean, 2)
}

struct Upsample2;

impl<T: Real> Backward<T> for Upsample2 {
    fn name(&self) -> &'static str {
        "upsample2x"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let x = ctx.inputs[0];
        let (n, c, h, w) = x.dims4()?;
        let g = ctx.grad.data();
        let mut dx = vec![T::zero(); x.len()];
        for plane in 0..n * c {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    let dst = plane * h * w + (y / 2) * w + xx / 2;
                    dx[dst] = dx[dst] + g[plane * 4 * h * w + y * 2 * w + xx];
                }
            }
        }
        Ok(vec![Some(Tensor::new(x.shape(), dx)?)])
    }
}

/// Nearest-neighbour 2x spatial upsampling.
pub fn upsample2x<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let xv = tape.value(x);
    let (n, c, h, w) = xv.dims4()?;
    let data = xv.data();
    let mut out = Vec::with_capacity(n * c * 4 * h * w);
    for plane in 0..n * c {
        for y in 0..2 * h {
            let row = &data[plane * h * w + (y / 2) * w..plane * h * w + (y / 2 + 1) * w];
            for &v in row {
                out.push(v);
                out.push(v);
            }
        }
    }
    let value = Tensor::new(&[n, c, 2 * h, 2 * w], out)?;
    tape.push(value, &[x], Box::new(Upsample2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maxpool_picks_window_max() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::<f64>::from_f64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = maxpool2x2(&mut tape, x).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0]);
        let s = tape.sum_all(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn maxpool_rejects_odd_dims() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::zeros(&[1, 1, 3, 4]));
        assert!(maxpool2x2(&mut tape, x).is_err());
    }

    #[test]
    fn maxpool_halves_spatial_dims() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::<f32>::zeros(&[2, 3, 8, 6]));
        let y = maxpool2x2(&mut tape, x).unwrap();
        assert_eq!(tape.shape(y), &[2, 3, 4, 3]);
    }

    #[test]
    fn gap_averages_planes() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::from_f64(&[1, 2, 1, 2], &[1.0, 3.0, -2.0, 4.0]).unwrap());
        let y = global_avg_pool(&mut tape, x).unwrap();
        assert_eq!(tape.shape(y), &[1, 2]);
        assert_eq!(tape.value(y).data(), &[2.0, 1.0]);
    }

    #[test]
    fn upsample_repeats_pixels() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::from_f64(&[1, 1, 1, 2], &[1.0, 2.0]).unwrap());
        let y = upsample2x(&mut tape, x).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }
}
