//! Stride-1, zero same-padded convolutions: standard, cosine-normalized and
//! depthwise. Square odd kernels only (3x3 spatial, 1x1 pointwise).

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use crate::autodiff::{Backward, BackwardCtx, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Denominator floor of the cosine-normalized convolution.
pub const COSINE_EPS: f64 = 1e-8;

/// Unfold one `[c, h, w]` image into `[c*k*k, h*w]` patch columns.
pub(crate) fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, k: usize, cols: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ch in 0..c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    let line = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    // valid output columns: 0 <= x + dx < w
                    let lo = (-dx).max(0) as usize;
                    let hi = ((w as isize - dx).min(w as isize)).max(0) as usize;
                    line[..lo.min(w)].fill(T::zero());
                    if lo < hi {
                        let s0 = (lo as isize + dx) as usize;
                        line[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                    }
                    line[hi.max(lo).min(w)..].fill(T::zero());
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add patch columns back onto `[c, h, w]`.
pub(crate) fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, k: usize, x: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ch in 0..c {
        let plane = &mut x[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let lo = (-dx).max(0) as usize;
                    let hi = ((w as isize - dx).min(w as isize)).max(0) as usize;
                    if lo >= hi {
                        continue;
                    }
                    let s0 = (lo as isize + dx) as usize;
                    let dst = &mut plane[sy as usize * w + s0..sy as usize * w + s0 + (hi - lo)];
                    for (d, &v) in dst.iter_mut().zip(&src[y * w + lo..y * w + hi]) {
                        *d = *d + v;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvDims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    out: usize,
    k: usize,
}

impl ConvDims {
    fn patch(&self) -> usize {
        self.c * self.k * self.k
    }

    fn plane(&self) -> usize {
        self.h * self.w
    }
}

fn conv_dims<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, op: &str) -> Result<ConvDims> {
    let (n, c, h, w) = x.dims4()?;
    let (out, in_ch, kh, kw) = weight.dims4()?;
    if in_ch != c {
        return Err(Error::Shape(format!(
            "{op}: input has {c} channels but the filters expect {in_ch}"
        )));
    }
    if kh != kw || kh % 2 == 0 {
        return Err(Error::Shape(format!("{op}: kernel must be square and odd, got {kh}x{kw}")));
    }
    Ok(ConvDims { n, c, h, w, out, k: kh })
}

/// Columns of sample `i`; a 1x1 kernel reads the image directly.
fn sample_cols<'a, T: Real>(
    x: &'a [T],
    d: &ConvDims,
    i: usize,
    buf: &'a mut Vec<T>,
) -> &'a [T] {
    let img = &x[i * d.c * d.plane()..(i + 1) * d.c * d.plane()];
    if d.k == 1 {
        img
    } else {
        buf.resize(d.patch() * d.plane(), T::zero());
        im2col(img, d.c, d.h, d.w, d.k, buf);
        buf
    }
}

struct Conv2d {
    dims: ConvDims,
    has_bias: bool,
}

impl<T: Real> Backward<T> for Conv2d {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let d = self.dims;
        let (x, weight) = (ctx.inputs[0], ctx.inputs[1]);
        let g = ctx.grad.data();
        let (patch, plane) = (d.patch(), d.plane());
        let mut dw = ctx.needs[1].then(|| vec![T::zero(); weight.len()]);
        let mut db = (self.has_bias && ctx.needs[2]).then(|| vec![T::zero(); d.out]);
        let mut dx = ctx.needs[0].then(|| vec![T::zero(); x.len()]);
        let mut buf = Vec::new();
        let mut dcols = Vec::new();
        for i in 0..d.n {
            let gi = &g[i * d.out * plane..(i + 1) * d.out * plane];
            if let Some(db) = db.as_mut() {
                for (o, b) in db.iter_mut().enumerate() {
                    *b = *b + gi[o * plane..(o + 1) * plane].iter().copied().sum::<T>();
                }
            }
            if let Some(dw) = dw.as_mut() {
                let cols = sample_cols(x.data(), &d, i, &mut buf);
                T::gemm(false, true, d.out, patch, plane, T::one(), gi, cols, T::one(), dw);
            }
            if let Some(dx) = dx.as_mut() {
                let dst = &mut dx[i * d.c * plane..(i + 1) * d.c * plane];
                if d.k == 1 {
                    T::gemm(true, false, patch, plane, d.out, T::one(), weight.data(), gi, T::zero(), dst);
                } else {
                    dcols.resize(patch * plane, T::zero());
                    T::gemm(true, false, patch, plane, d.out, T::one(), weight.data(), gi, T::zero(), &mut dcols);
                    col2im(&dcols, d.c, d.h, d.w, d.k, dst);
                }
            }
        }
        let mut grads = vec![
            dx.map(|v| Tensor::new(x.shape(), v)).transpose()?,
            dw.map(|v| Tensor::new(weight.shape(), v)).transpose()?,
        ];
        if self.has_bias {
            grads.push(db.map(|v| Tensor::new(&[d.out], v)).transpose()?);
        }
        Ok(grads)
    }
}

/// Standard cross-correlation. `x: [N, C, H, W]`, `weight: [O, C, k, k]`,
/// `bias: [O]`; output `[N, O, H, W]`.
pub fn conv2d<T: Real>(tape: &mut Tape<T>, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
    let d = conv_dims(tape.value(x), tape.value(weight), "conv2d")?;
    if let Some(b) = bias {
        tape.value(b).expect_shape(&[d.out])?;
    }
    let (patch, plane) = (d.patch(), d.plane());
    let xv = tape.value(x).data();
    let wv = tape.value(weight).data();
    let bv = bias.map(|b| tape.value(b).data());
    let mut out = vec![T::zero(); d.n * d.out * plane];
    let mut buf = Vec::new();
    for i in 0..d.n {
        let cols = sample_cols(xv, &d, i, &mut buf);
        let dst = &mut out[i * d.out * plane..(i + 1) * d.out * plane];
        T::gemm(false, false, d.out, plane, patch, T::one(), wv, cols, T::zero(), dst);
        if let Some(b) = bv {
            for (o, &bo) in b.iter().enumerate() {
                dst[o * plane..(o + 1) * plane].iter_mut().for_each(|v| *v = *v + bo);
            }
        }
    }
    let value = Tensor::new(&[d.n, d.out, d.h, d.w], out)?;
    let mut inputs = vec![x, weight];
    inputs.extend(bias);
    tape.push(value, &inputs, Box::new(Conv2d { dims: d, has_bias: bias.is_some() }))
}

/// Per-sample quantities shared by the cosine convolution's passes.
struct CosineSample<T> {
    /// `|patch|` per output location.
    patch_norm: Vec<T>,
    /// `max(|w_o| |x_l|, eps)`, row-major `[O, H*W]`.
    denom: Vec<T>,
}

fn filter_norms<T: Real>(weight: &[T], out: usize, patch: usize) -> Vec<T> {
    (0..out)
        .map(|o| {
            weight[o * patch..(o + 1) * patch]
                .iter()
                .map(|&v| v * v)
                .sum::<T>()
                .sqrt()
        })
        .collect()
}

fn cosine_sample<T: Real>(cols: &[T], wnorm: &[T], patch: usize, plane: usize) -> CosineSample<T> {
    let mut patch_norm = vec![T::zero(); plane];
    for r in 0..patch {
        for (acc, &v) in patch_norm.iter_mut().zip(&cols[r * plane..(r + 1) * plane]) {
            *acc = *acc + v * v;
        }
    }
    patch_norm.iter_mut().for_each(|v| *v = v.sqrt());
    let eps = T::of(COSINE_EPS);
    let mut denom = Vec::with_capacity(wnorm.len() * plane);
    for &wn in wnorm {
        denom.extend(patch_norm.iter().map(|&xn| (wn * xn).max(eps)));
    }
    CosineSample { patch_norm, denom }
}

struct CosineConv2d {
    dims: ConvDims,
}

impl<T: Real> Backward<T> for CosineConv2d {
    fn name(&self) -> &'static str {
        "cosine_norm_conv"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let d = self.dims;
        let (x, weight, y) = (ctx.inputs[0], ctx.inputs[1], ctx.output.data());
        let g = ctx.grad.data();
        let (patch, plane) = (d.patch(), d.plane());
        let eps = T::of(COSINE_EPS);
        let wv = weight.data();
        let wnorm = filter_norms(wv, d.out, patch);
        let mut dw = ctx.needs[1].then(|| vec![T::zero(); weight.len()]);
        let mut dx = ctx.needs[0].then(|| vec![T::zero(); x.len()]);
        // row and column sums of S = g * y over the active (unfloored) branch
        let mut w_shrink = vec![T::zero(); d.out];
        let mut buf = Vec::new();
        let mut dcols = Vec::new();
        let mut q = vec![T::zero(); d.out * plane];
        let mut col_shrink = vec![T::zero(); plane];
        for i in 0..d.n {
            let cols = sample_cols(x.data(), &d, i, &mut buf);
            let s = cosine_sample(cols, &wnorm, patch, plane);
            let off = i * d.out * plane;
            col_shrink.fill(T::zero());
            for o in 0..d.out {
                for l in 0..plane {
                    let j = o * plane + l;
                    let den = s.denom[j];
                    q[j] = g[off + j] / den;
                    if den > eps {
                        let sv = g[off + j] * y[off + j];
                        w_shrink[o] = w_shrink[o] + sv;
                        col_shrink[l] = col_shrink[l] + sv;
                    }
                }
            }
            if let Some(dw) = dw.as_mut() {
                T::gemm(false, true, d.out, patch, plane, T::one(), &q, cols, T::one(), dw);
            }
            if let Some(dx) = dx.as_mut() {
                dcols.resize(patch * plane, T::zero());
                T::gemm(true, false, patch, plane, d.out, T::one(), wv, &q, T::zero(), &mut dcols);
                for l in 0..plane {
                    let xn = s.patch_norm[l];
                    if col_shrink[l] != T::zero() {
                        let f = col_shrink[l] / (xn * xn);
                        for r in 0..patch {
                            dcols[r * plane + l] = dcols[r * plane + l] - f * cols[r * plane + l];
                        }
                    }
                }
                let dst = &mut dx[i * d.c * plane..(i + 1) * d.c * plane];
                if d.k == 1 {
                    dst.copy_from_slice(&dcols);
                } else {
                    col2im(&dcols, d.c, d.h, d.w, d.k, dst);
                }
            }
        }
        if let Some(dw) = dw.as_mut() {
            for o in 0..d.out {
                if w_shrink[o] != T::zero() {
                    let f = w_shrink[o] / (wnorm[o] * wnorm[o]);
                    for r in 0..patch {
                        dw[o * patch + r] = dw[o * patch + r] - f * wv[o * patch + r];
                    }
                }
            }
        }
        Ok(vec![
            dx.map(|v| Tensor::new(x.shape(), v)).transpose()?,
            dw.map(|v| Tensor::new(weight.shape(), v)).transpose()?,
        ])
    }

    fn decisions(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, hasher: &mut DefaultHasher) {
        let d = self.dims;
        let eps = T::of(COSINE_EPS);
        let wnorm = filter_norms(inputs[1].data(), d.out, d.patch());
        let mut buf = Vec::new();
        for i in 0..d.n {
            let cols = sample_cols(inputs[0].data(), &d, i, &mut buf);
            let s = cosine_sample(cols, &wnorm, d.patch(), d.plane());
            for &den in &s.denom {
                hasher.write_u8((den > eps) as u8);
            }
        }
    }
}

/// Cosine-normalized convolution: each output is the cosine between the
/// flattened filter and the flattened input patch (all input channels of
/// the window), `w.x / max(|w| |x|, eps)`. No bias; outputs lie in `[-1, 1]`.
pub fn cosine_conv2d<T: Real>(tape: &mut Tape<T>, x: Var, weight: Var) -> Result<Var> {
    let d = conv_dims(tape.value(x), tape.value(weight), "cosine_norm_conv")?;
    let (patch, plane) = (d.patch(), d.plane());
    let xv = tape.value(x).data();
    let wv = tape.value(weight).data();
    let wnorm = filter_norms(wv, d.out, patch);
    let mut out = vec![T::zero(); d.n * d.out * plane];
    let mut buf = Vec::new();
    for i in 0..d.n {
        let cols = sample_cols(xv, &d, i, &mut buf);
        let dst = &mut out[i * d.out * plane..(i + 1) * d.out * plane];
        T::gemm(false, false, d.out, plane, patch, T::one(), wv, cols, T::zero(), dst);
        let s = cosine_sample(cols, &wnorm, patch, plane);
        for (v, &den) in dst.iter_mut().zip(&s.denom) {
            *v = *v / den;
        }
    }
    let value = Tensor::new(&[d.n, d.out, d.h, d.w], out)?;
    tape.push(value, &[x, weight], Box::new(CosineConv2d { dims: d }))
}

struct Depthwise {
    dims: ConvDims,
}

impl<T: Real> Backward<T> for Depthwise {
    fn name(&self) -> &'static str {
        "depthwise_conv"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let d = self.dims;
        let (x, weight) = (ctx.inputs[0], ctx.inputs[1]);
        let (g, xv, wv) = (ctx.grad.data(), x.data(), weight.data());
        let (kk, plane) = (d.k * d.k, d.plane());
        let mut dw = ctx.needs[1].then(|| vec![T::zero(); weight.len()]);
        let mut dx = ctx.needs[0].then(|| vec![T::zero(); x.len()]);
        let mut cols = vec![T::zero(); kk * plane];
        for i in 0..d.n {
            for c in 0..d.c {
                let base = (i * d.c + c) * plane;
                let gp = &g[base..base + plane];
                if let Some(dw) = dw.as_mut() {
                    im2col(&xv[base..base + plane], 1, d.h, d.w, d.k, &mut cols);
                    T::gemm(false, true, 1, kk, plane, T::one(), gp, &cols, T::one(), &mut dw[c * kk..(c + 1) * kk]);
                }
                if let Some(dx) = dx.as_mut() {
                    T::gemm(true, false, kk, plane, 1, T::one(), &wv[c * kk..(c + 1) * kk], gp, T::zero(), &mut cols);
                    col2im(&cols, 1, d.h, d.w, d.k, &mut dx[base..base + plane]);
                }
            }
        }
        Ok(vec![
            dx.map(|v| Tensor::new(x.shape(), v)).transpose()?,
            dw.map(|v| Tensor::new(weight.shape(), v)).transpose()?,
        ])
    }
}

/// Per-channel spatial convolution. `weight: [C, 1, k, k]`. Each channel
/// goes through the same unfold-and-multiply path as [`conv2d`] with a
/// single filter.
pub fn depthwise_conv2d<T: Real>(tape: &mut Tape<T>, x: Var, weight: Var) -> Result<Var> {
    let (n, c, h, w) = tape.value(x).dims4()?;
    let (wc, one, kh, kw) = tape.value(weight).dims4()?;
    if wc != c || one != 1 {
        return Err(Error::Shape(format!(
            "depthwise_conv: input has {c} channels, filters are [{wc}, {one}, {kh}, {kw}]"
        )));
    }
    if kh != kw || kh % 2 == 0 {
        return Err(Error::Shape(format!("depthwise_conv: kernel must be square and odd, got {kh}x{kw}")));
    }
    let d = ConvDims { n, c, h, w, out: c, k: kh };
    let (kk, plane) = (d.k * d.k, d.plane());
    let xv = tape.value(x).data();
    let wv = tape.value(weight).data();
    let mut out = vec![T::zero(); xv.len()];
    let mut cols = vec![T::zero(); kk * plane];
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * plane;
            im2col(&xv[base..base + plane], 1, h, w, d.k, &mut cols);
            T::gemm(false, false, 1, plane, kk, T::one(), &wv[ch * kk..(ch + 1) * kk], &cols, T::zero(), &mut out[base..base + plane]);
        }
    }
    let value = Tensor::new(&[n, c, h, w], out)?;
    tape.push(value, &[x, weight], Box::new(Depthwise { dims: d }))
}

/// Depthwise 3x3 per channel, then a 1x1 pointwise convolution that mixes
/// channels, then the bias.
pub fn depthwise_separable_conv2d<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    depthwise: Var,
    pointwise: Var,
    bias: Var,
) -> Result<Var> {
    let spatial = depthwise_conv2d(tape, x, depthwise)?;
    conv2d(tape, spatial, pointwise, Some(bias))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
        let n = crate::tensor::numel(shape);
        Tensor::new(shape, (0..n).map(|_| rng.normal()).collect()).unwrap()
    }

    /// Direct quadruple loop with explicit zero padding.
    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64]) -> Vec<f64> {
        let (n, c, h, wd) = x.dims4().unwrap();
        let (o, _, k, _) = w.dims4().unwrap();
        let p = (k / 2) as isize;
        let mut out = vec![0.0; n * o * h * wd];
        for i in 0..n {
            for oc in 0..o {
                for y in 0..h {
                    for xx in 0..wd {
                        let mut acc = b[oc];
                        for ic in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let sy = y as isize + ky as isize - p;
                                    let sx = xx as isize + kx as isize - p;
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                        continue;
                                    }
                                    acc += w.data()[((oc * c + ic) * k + ky) * k + kx]
                                        * x.data()[((i * c + ic) * h + sy as usize) * wd + sx as usize];
                                }
                            }
                        }
                        out[((i * o + oc) * h + y) * wd + xx] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn ones_kernel_counts_receptive_field() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::ones(&[1, 1, 3, 3]));
        let w = tape.param(Tensor::ones(&[1, 1, 3, 3]));
        let b = tape.param(Tensor::zeros(&[1]));
        let y = conv2d(&mut tape, x, w, Some(b)).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut rng = Rng::new(1);
        let xv = random(&[2, 1, 4, 5], &mut rng);
        let mut delta = Tensor::zeros(&[1, 1, 3, 3]);
        delta.data_mut()[4] = 1.0;
        let mut tape = Tape::new();
        let x = tape.constant(xv.clone());
        let w = tape.constant(delta);
        let y = conv2d(&mut tape, x, w, None).unwrap();
        assert_eq!(tape.value(y).data(), xv.data());
    }

    #[test]
    fn matches_naive_loops() {
        let mut rng = Rng::new(2);
        for k in [1usize, 3] {
            let xv = random(&[1, 2, 5, 5], &mut rng);
            let wv = random(&[3, 2, k, k], &mut rng);
            let bv = random(&[3], &mut rng);
            let mut tape = Tape::new();
            let x = tape.constant(xv.clone());
            let w = tape.constant(wv.clone());
            let b = tape.constant(bv.clone());
            let y = conv2d(&mut tape, x, w, Some(b)).unwrap();
            let expected = naive_conv(&xv, &wv, bv.data());
            for (a, e) in tape.value(y).data().iter().zip(&expected) {
                assert!((a - e).abs() <= 1e-12 * (1.0 + e.abs()), "{a} vs {e}");
            }
        }
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::ones(&[1, 2, 3, 3]));
        let w = tape.param(Tensor::ones(&[1, 3, 3, 3]));
        assert!(conv2d(&mut tape, x, w, None).is_err());
        assert!(cosine_conv2d(&mut tape, x, w).is_err());
        let dw = tape.param(Tensor::ones(&[3, 1, 3, 3]));
        assert!(depthwise_conv2d(&mut tape, x, dw).is_err());
    }

    fn single_patch_cosine(patch: &[f64], filter: &[f64]) -> f64 {
        // one 1x1 image with patch.len() channels and a 1x1 kernel sees the
        // whole vector as its patch
        let c = patch.len();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_f64(&[1, c, 1, 1], patch).unwrap());
        let w = tape.param(Tensor::from_f64(&[1, c, 1, 1], filter).unwrap());
        let y = cosine_conv2d(&mut tape, x, w).unwrap();
        tape.value(y).item().unwrap()
    }

    #[test]
    fn cosine_of_parallel_antiparallel_orthogonal() {
        let x = [0.3, -1.2, 2.0, 0.7];
        let w: Vec<f64> = x.iter().map(|v| 2.5 * v).collect();
        assert!((single_patch_cosine(&x, &w) - 1.0).abs() < 1e-12);
        let w: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((single_patch_cosine(&x, &w) + 1.0).abs() < 1e-12);
        assert_eq!(single_patch_cosine(&[1.0, 1.0, 0.0], &[1.0, -1.0, 0.0]), 0.0);
    }

    #[test]
    fn cosine_zero_patch_gives_zero() {
        assert_eq!(single_patch_cosine(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
    }

    #[test]
    fn cosine_matches_naive_patches() {
        let mut rng = Rng::new(3);
        let xv = random(&[1, 2, 4, 4], &mut rng);
        let wv = random(&[3, 2, 3, 3], &mut rng);
        let mut tape = Tape::new();
        let x = tape.constant(xv.clone());
        let w = tape.constant(wv.clone());
        let y = cosine_conv2d(&mut tape, x, w).unwrap();
        let dots = naive_conv(&xv, &wv, &[0.0; 3]);
        let ones = Tensor::ones(&[1, 2, 3, 3]);
        let sq = xv.map(|v| v * v);
        let patch_sq = naive_conv(&sq, &ones, &[0.0]);
        for o in 0..3 {
            let wn = wv.data()[o * 18..(o + 1) * 18].iter().map(|v| v * v).sum::<f64>().sqrt();
            for l in 0..16 {
                let expected = dots[o * 16 + l] / (wn * patch_sq[l].sqrt()).max(COSINE_EPS);
                let got = tape.value(y).data()[o * 16 + l];
                assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
            }
        }
    }

    #[test]
    fn depthwise_delta_reduces_to_pointwise() {
        let mut rng = Rng::new(4);
        let xv = random(&[2, 3, 4, 4], &mut rng);
        let pw = random(&[5, 3, 1, 1], &mut rng);
        let bias = random(&[5], &mut rng);
        let mut delta = Tensor::zeros(&[3, 1, 3, 3]);
        for c in 0..3 {
            delta.data_mut()[c * 9 + 4] = 1.0;
        }
        let mut tape = Tape::new();
        let x = tape.constant(xv);
        let (dwv, pwv, bv) = (tape.constant(delta), tape.constant(pw), tape.constant(bias));
        let dsc = depthwise_separable_conv2d(&mut tape, x, dwv, pwv, bv).unwrap();
        let plain = conv2d(&mut tape, x, pwv, Some(bv)).unwrap();
        assert_eq!(tape.value(dsc).data(), tape.value(plain).data());
    }

    #[test]
    fn zero_pointwise_gives_bias() {
        let mut rng = Rng::new(5);
        let mut tape = Tape::new();
        let x = tape.constant(random(&[1, 2, 3, 3], &mut rng));
        let dw = tape.constant(random(&[2, 1, 3, 3], &mut rng));
        let pw = tape.constant(Tensor::zeros(&[4, 2, 1, 1]));
        let b = tape.constant(Tensor::from_f64(&[4], &[1.0, -2.0, 0.5, 3.0]).unwrap());
        let y = depthwise_separable_conv2d(&mut tape, x, dw, pw, b).unwrap();
        for (i, &v) in tape.value(y).data().iter().enumerate() {
            assert_eq!(v, [1.0, -2.0, 0.5, 3.0][i / 9]);
        }
    }

    #[test]
    fn depthwise_matches_per_channel_conv() {
        let mut rng = Rng::new(6);
        let xv = random(&[2, 3, 5, 4], &mut rng);
        let dwv = random(&[3, 1, 3, 3], &mut rng);
        let mut tape = Tape::new();
        let x = tape.constant(xv.clone());
        let dw = tape.constant(dwv.clone());
        let y = depthwise_conv2d(&mut tape, x, dw).unwrap();
        let got = tape.value(y).clone();
        for c in 0..3 {
            // each channel through the standard conv with a single filter
            let xc: Vec<f64> = (0..2)
                .flat_map(|i| xv.data()[(i * 3 + c) * 20..(i * 3 + c + 1) * 20].to_vec())
                .collect();
            let mut t2 = Tape::new();
            let xcv = t2.constant(Tensor::new(&[2, 1, 5, 4], xc).unwrap());
            let wc = t2.constant(Tensor::new(&[1, 1, 3, 3], dwv.data()[c * 9..(c + 1) * 9].to_vec()).unwrap());
            let yc = conv2d(&mut t2, xcv, wc, None).unwrap();
            for i in 0..2 {
                assert_eq!(
                    &got.data()[(i * 3 + c) * 20..(i * 3 + c + 1) * 20],
                    &t2.value(yc).data()[i * 20..(i + 1) * 20]
                );
            }
        }
    }
}
