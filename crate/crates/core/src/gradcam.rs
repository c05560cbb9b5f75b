//! Gradient-weighted class activation maps.

use std::path::Path;

use image::imageops::{self, FilterType};
use image::{ImageBuffer, Luma, Rgb, RgbImage};

use crate::autodiff::Tape;
use crate::data::Label;
use crate::error::{Error, Result};
use crate::model::{Branch, HybridModel};
use crate::nn::Mode;
use crate::tensor::{Real, Tensor};

/// Which feature map the map is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CamLayer {
    /// Channel concatenation of the enabled branches' last blocks.
    Concat,
    /// Last block of one branch.
    Branch(Branch),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCam {
    /// `[S, S]` in `[0, 1]`, max exactly 1 unless degenerate.
    pub heatmap: Tensor<f32>,
    /// Unnormalized `ReLU(sum_k w_k A_k)` at the tapped resolution.
    pub raw: Tensor<f64>,
    /// True when the raw map is identically zero; the heatmap is then flat 0.
    pub degenerate: bool,
}

/// `ReLU(sum_k w_k A_k)` where `w_k` is the spatial mean of `grads[k]`.
/// Both inputs are `[C, h, w]`; returns `[h, w]`.
pub fn cam_from_activations(acts: &Tensor<f64>, grads: &Tensor<f64>) -> Result<Tensor<f64>> {
    let [c, h, w] = *acts.shape() else {
        return Err(Error::Shape(format!("activations must be [C, h, w], got {:?}", acts.shape())));
    };
    if grads.shape() != acts.shape() {
        return Err(Error::Shape(format!("gradients {:?} vs activations {:?}", grads.shape(), acts.shape())));
    }
    let plane = h * w;
    let mut cam = vec![0.0; plane];
    for k in 0..c {
        let g = &grads.data()[k * plane..(k + 1) * plane];
        let weight = g.iter().sum::<f64>() / plane as f64;
        for (o, &a) in cam.iter_mut().zip(&acts.data()[k * plane..(k + 1) * plane]) {
            *o += weight * a;
        }
    }
    Tensor::new(&[h, w], cam.into_iter().map(|v| v.max(0.0)).collect())
}

/// Bilinear resize of a `[h, w]` map to `size x size`, then division by its
/// maximum. An all-zero map stays flat zero and is flagged degenerate.
pub fn upsample_normalize(raw: &Tensor<f64>, size: usize) -> Result<(Tensor<f32>, bool)> {
    let [h, w] = *raw.shape() else {
        return Err(Error::Shape(format!("map must be [h, w], got {:?}", raw.shape())));
    };
    let buf: ImageBuffer<Luma<f32>, Vec<f32>> =
        ImageBuffer::from_raw(w as u32, h as u32, raw.data().iter().map(|&v| v as f32).collect())
            .expect("buffer length matches dimensions");
    let up = if (h, w) == (size, size) {
        buf
    } else {
        imageops::resize(&buf, size as u32, size as u32, FilterType::Triangle)
    };
    let mut data = up.into_raw();
    let max = data.iter().cloned().fold(0.0f32, f32::max);
    if max <= 0.0 {
        data.iter_mut().for_each(|v| *v = 0.0);
        return Ok((Tensor::new(&[size, size], data)?, true));
    }
    for v in &mut data {
        *v = (*v / max).clamp(0.0, 1.0);
    }
    Ok((Tensor::new(&[size, size], data)?, false))
}

/// GradCAM of `image` (`[3, S, S]`) for `target`, scored on the target logit
/// with the model in eval mode.
pub fn gradcam<T: Real>(model: &HybridModel<T>, image: &Tensor<f32>, target: Label, layer: CamLayer) -> Result<GradCam> {
    let size = model.config().input_size;
    image.expect_shape(&[3, size, size])?;
    let mut tape = Tape::<T>::new();
    let x = tape.constant(image.cast::<T>().into_reshaped(&[1, 3, size, size])?);
    let out = model.forward(&mut tape, x, Mode::Eval)?;
    let tap = match layer {
        CamLayer::Concat => out.taps.concat,
        CamLayer::Branch(b) => {
            out.taps
                .blocks
                .get(&b)
                .and_then(|blocks| blocks.last())
                .ok_or_else(|| Error::InvalidArgument(format!("branch {} is disabled", b.name())))?
                .output
        }
    };
    let mut onehot = Tensor::zeros(&[1, 2]);
    onehot.data_mut()[target.index()] = T::one();
    let sel = tape.constant(onehot);
    let picked = tape.mul(out.logits, sel)?;
    let score = tape.sum_all(picked)?;
    let grads = tape.backward(score)?;
    let acts = tape.value(tap);
    let g = grads
        .get(tap)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(acts.shape()));
    let shape = &acts.shape()[1..];
    let raw = cam_from_activations(&acts.cast::<f64>().reshape(shape)?, &g.cast::<f64>().reshape(shape)?)?;
    let (heatmap, degenerate) = upsample_normalize(&raw, size)?;
    if degenerate {
        log::warn!("gradcam: degenerate gradient, reporting a flat map");
    }
    Ok(GradCam { heatmap, raw, degenerate })
}

/// Jet colormap on `[0, 1]`.
pub fn jet(v: f32) -> [f32; 3] {
    let v = v.clamp(0.0, 1.0);
    let ramp = |c: f32| (1.5 - (4.0 * v - c).abs()).clamp(0.0, 1.0);
    [ramp(3.0), ramp(2.0), ramp(1.0)]
}

/// Blends the jet-coloured heatmap over `image` (`[3, S, S]`) with weight
/// `alpha`.
pub fn overlay(image: &Tensor<f32>, heatmap: &Tensor<f32>, alpha: f32) -> Result<RgbImage> {
    let [s, s2] = *heatmap.shape() else {
        return Err(Error::Shape(format!("heatmap must be [S, S], got {:?}", heatmap.shape())));
    };
    image.expect_shape(&[3, s, s2])?;
    let plane = s * s2;
    let px = image.data();
    Ok(RgbImage::from_fn(s2 as u32, s as u32, |x, y| {
        let i = y as usize * s2 + x as usize;
        let c = jet(heatmap.data()[i]);
        Rgb([0, 1, 2].map(|k| (((1.0 - alpha) * px[k * plane + i] + alpha * c[k]) * 255.0).round().clamp(0.0, 255.0) as u8))
    }))
}

pub fn write_overlay(path: &Path, image: &Tensor<f32>, heatmap: &Tensor<f32>) -> Result<()> {
    overlay(image, heatmap, 0.5)?.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_positive_channel_is_reproduced() {
        let acts = Tensor::from_f64(&[1, 2, 3], &[0.0, 1.0, 2.0, 3.0, 4.0, 8.0]).unwrap();
        let grads = Tensor::full(&[1, 2, 3], 0.25);
        let raw = cam_from_activations(&acts, &grads).unwrap();
        assert_eq!(raw.data(), &[0.0, 0.25, 0.5, 0.75, 1.0, 2.0]);
        let acts = Tensor::from_f64(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let raw = cam_from_activations(&acts, &Tensor::full(&[1, 2, 2], 3.0)).unwrap();
        let (h, degenerate) = upsample_normalize(&raw, 2).unwrap();
        assert!(!degenerate);
        assert_eq!(h.data(), &[0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn negative_evidence_is_clipped() {
        let acts = Tensor::from_f64(&[2, 1, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let grads = Tensor::from_f64(&[2, 1, 2], &[1.0, 1.0, -2.0, -2.0]).unwrap();
        assert_eq!(cam_from_activations(&acts, &grads).unwrap().data(), &[1.0, 0.0]);
    }

    #[test]
    fn zero_gradient_is_degenerate() {
        let acts = Tensor::full(&[3, 2, 2], 1.0);
        let raw = cam_from_activations(&acts, &Tensor::zeros(&[3, 2, 2])).unwrap();
        let (h, degenerate) = upsample_normalize(&raw, 8).unwrap();
        assert!(degenerate);
        assert!(h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn upsampled_map_is_normalized() {
        let raw = Tensor::from_f64(&[2, 2], &[0.0, 1.0, 2.0, 5.0]).unwrap();
        let (h, _) = upsample_normalize(&raw, 16).unwrap();
        assert_eq!(h.shape(), &[16, 16]);
        assert!(h.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(h.data().iter().cloned().fold(0.0, f32::max), 1.0);
    }

    #[test]
    fn jet_endpoints() {
        assert_eq!(jet(0.0), [0.0, 0.0, 0.5]);
        assert_eq!(jet(1.0), [0.5, 0.0, 0.0]);
        assert_eq!(jet(0.5), [0.5, 1.0, 0.5]);
    }
}
