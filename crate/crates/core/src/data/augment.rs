use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::{Item, Label, LabeledDataset};

/// Standard deviation of additive noise, in `[0, 1]` pixel units.
pub const DEFAULT_NOISE_SIGMA: f64 = 0.02;

/// Label-preserving image transforms. Rotations are clockwise multiples of
/// 90 degrees, so no pixel is interpolated or invented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    HorizontalFlip,
    VerticalFlip,
    Rotate90,
    Rotate180,
    Rotate270,
    GaussianNoise,
}

impl Transform {
    pub const ALL: [Transform; 6] = [
        Transform::HorizontalFlip,
        Transform::VerticalFlip,
        Transform::Rotate90,
        Transform::Rotate180,
        Transform::Rotate270,
        Transform::GaussianNoise,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Transform::HorizontalFlip => "hflip",
            Transform::VerticalFlip => "vflip",
            Transform::Rotate90 => "rot90",
            Transform::Rotate180 => "rot180",
            Transform::Rotate270 => "rot270",
            Transform::GaussianNoise => "noise",
        }
    }

    /// Applies the transform to a `[C, S, S]` image. Noise is drawn from
    /// `rng` and the result clipped to `[0, 1]`.
    pub fn apply(self, image: &Tensor<f32>, sigma: f64, rng: &mut Rng) -> Result<Tensor<f32>> {
        let (c, h, w) = match *image.shape() {
            [c, h, w] if h == w => (c, h, w),
            ref s => return Err(Error::Shape(format!("transforms need a square [C, S, S] image, got {s:?}"))),
        };
        let src = image.data();
        let remap = |f: &dyn Fn(usize, usize) -> (usize, usize)| -> Vec<f32> {
            let mut out = Vec::with_capacity(src.len());
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let (sy, sx) = f(y, x);
                        out.push(src[(ch * h + sy) * w + sx]);
                    }
                }
            }
            out
        };
        let n = h - 1;
        let data = match self {
            Transform::HorizontalFlip => remap(&|y, x| (y, n - x)),
            Transform::VerticalFlip => remap(&|y, x| (n - y, x)),
            Transform::Rotate90 => remap(&|y, x| (n - x, y)),
            Transform::Rotate180 => remap(&|y, x| (n - y, n - x)),
            Transform::Rotate270 => remap(&|y, x| (x, n - y)),
            Transform::GaussianNoise => src
                .iter()
                .map(|&v| (v as f64 + sigma * rng.normal()).clamp(0.0, 1.0) as f32)
                .collect(),
        };
        Tensor::new(image.shape(), data)
    }
}

/// Grows every class to `per_class_target` items. Each new item is a
/// uniformly chosen original (non-augmented) item of its class under a
/// uniformly chosen transform; it keeps the original's source path and is
/// tagged with the transform. Existing items are kept in place and new ones
/// appended class by class.
pub fn augment_to_target(
    d: &LabeledDataset,
    per_class_target: usize,
    sigma: f64,
    rng: &mut Rng,
) -> Result<LabeledDataset> {
    let mut items = d.items.clone();
    for label in Label::BOTH {
        let count = d.count(label);
        let originals: Vec<usize> = d
            .indices_of(label)
            .into_iter()
            .filter(|&i| d.items[i].augmentation.is_none())
            .collect();
        if originals.is_empty() {
            return Err(Error::Data(format!("no original {label} items to augment")));
        }
        if per_class_target < count {
            return Err(Error::InvalidArgument(format!(
                "target {per_class_target} is below the current {label} count {count}"
            )));
        }
        for _ in count..per_class_target {
            let src = &d.items[originals[rng.below(originals.len())]];
            let t = Transform::ALL[rng.below(Transform::ALL.len())];
            items.push(Item {
                image: t.apply(&src.image, sigma, rng)?,
                label,
                source: src.source.clone(),
                augmentation: Some(t),
            });
        }
    }
    Ok(LabeledDataset::new(items))
}
