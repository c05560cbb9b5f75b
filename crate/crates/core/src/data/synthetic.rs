use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::{Item, Label, LabeledDataset};

/// A textured `[3, size, size]` image whose dominant channel encodes the
/// class: red for abnormal, green for normal. A darker disc at a random
/// position gives the network some spatial structure to look at.
pub fn color_image(label: Label, size: usize, rng: &mut Rng) -> Tensor<f32> {
    let dominant = match label {
        Label::Abnormal => 0,
        Label::Normal => 1,
    };
    let level = [0, 1, 2].map(|c| {
        if c == dominant {
            rng.uniform_range(0.6, 0.9)
        } else {
            rng.uniform_range(0.1, 0.4)
        }
    });
    let (cy, cx) = (rng.uniform() * size as f64, rng.uniform() * size as f64);
    let radius = rng.uniform_range(0.1, 0.3) * size as f64;
    let plane = size * size;
    let mut data = vec![0.0f32; 3 * plane];
    for y in 0..size {
        for x in 0..size {
            let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
            let shade = if d2 < radius * radius { 0.7 } else { 1.0 };
            for c in 0..3 {
                let v = level[c] * shade + 0.05 * rng.normal();
                data[c * plane + y * size + x] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    Tensor::new(&[3, size, size], data).expect("shape and data agree")
}

/// `per_class` images of each class, normal first, with placeholder source
/// paths `synthetic/<class>/<index>.png`.
pub fn synthetic_color_dataset(per_class: usize, size: usize, seed: u64) -> LabeledDataset {
    let mut rng = Rng::new(seed);
    let mut items = Vec::with_capacity(2 * per_class);
    for label in Label::BOTH {
        for i in 0..per_class {
            items.push(Item {
                image: color_image(label, size, &mut rng),
                label,
                source: PathBuf::from(format!("synthetic/{label}/{i:04}.png")),
                augmentation: None,
            });
        }
    }
    LabeledDataset::new(items)
}

/// Writes the synthetic set as PNG files in the `root/{normal,abnormal}`
/// layout that `load_folder` reads.
pub fn write_synthetic_folder(root: &Path, per_class: usize, size: usize, seed: u64) -> Result<()> {
    let d = synthetic_color_dataset(per_class, size, seed);
    for label in Label::BOTH {
        let dir = root.join(label.dir_name());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let plane = size * size;
    for item in &d.items {
        let px = item.image.data();
        let img = RgbImage::from_fn(size as u32, size as u32, |x, y| {
            let i = y as usize * size + x as usize;
            Rgb([0, 1, 2].map(|c| (px[c * plane + i] * 255.0).round() as u8))
        });
        let name = item.source.file_name().expect("generated name");
        img.save(root.join(item.label.dir_name()).join(name))?;
    }
    Ok(())
}
