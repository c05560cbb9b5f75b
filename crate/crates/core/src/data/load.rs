use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::DynamicImage;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Item, Label, LabeledDataset};

#[derive(Debug, Clone)]
pub struct LoadReport {
    pub dataset: LabeledDataset,
    /// Files that could not be decoded, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

fn is_image(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

/// RGB conversion (grey replicated to all channels), bilinear resize to
/// `size x size`, scaling to `[0, 1]`; returns `[3, size, size]`.
pub fn image_to_tensor(img: &DynamicImage, size: usize) -> Result<Tensor<f32>> {
    let rgb = img.to_rgb8();
    let rgb = image::imageops::resize(&rgb, size as u32, size as u32, FilterType::Triangle);
    let plane = size * size;
    let mut data = vec![0.0f32; 3 * plane];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px.0[c] as f32 / 255.0;
        }
    }
    Tensor::new(&[3, size, size], data)
}

pub fn load_image(path: &Path, size: usize) -> Result<Tensor<f32>> {
    let img = image::open(path)?;
    image_to_tensor(&img, size)
}

/// Reads `root/normal` and `root/abnormal` (PNG/JPEG, other files ignored),
/// normal class first and files in lexicographic order within each class.
/// Undecodable files are skipped with a warning and listed in the report.
pub fn load_folder(root: &Path, size: usize) -> Result<LoadReport> {
    let mut items = Vec::new();
    let mut skipped = Vec::new();
    for label in Label::BOTH {
        let dir = root.join(label.dir_name());
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_image(p))
            .collect();
        files.sort();
        let before = items.len();
        for path in files {
            match load_image(&path, size) {
                Ok(image) => items.push(Item { image, label, source: path, augmentation: None }),
                Err(e) => {
                    log::warn!("skipping {}: {e}", path.display());
                    skipped.push((path, e.to_string()));
                }
            }
        }
        if items.len() == before {
            return Err(Error::Data(format!("no readable images in {}", dir.display())));
        }
    }
    Ok(LoadReport { dataset: LabeledDataset::new(items), skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Luma, Rgb, RgbImage};

    fn setup(normal: usize, abnormal: usize) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for (label, n) in [("normal", normal), ("abnormal", abnormal)] {
            fs::create_dir(dir.path().join(label)).unwrap();
            for i in 0..n {
                let img = RgbImage::from_pixel(8, 8, Rgb([i as u8 * 10, 100, 200]));
                img.save(dir.path().join(label).join(format!("{i:02}.png"))).unwrap();
            }
        }
        dir
    }

    #[test]
    fn census_and_order() {
        let dir = setup(2, 2);
        let r = load_folder(dir.path(), 4).unwrap();
        let labels: Vec<usize> = r.dataset.items.iter().map(|i| i.label.index()).collect();
        assert_eq!(labels, vec![0, 0, 1, 1]);
        assert!(r.dataset.items[0].source.ends_with("normal/00.png"));
        assert_eq!(r.dataset.items[0].image.shape(), &[3, 4, 4]);
        assert!((r.dataset.items[1].image.data()[0] - 10.0 / 255.0).abs() < 1e-6);
    }

    #[test]
    fn greyscale_is_replicated() {
        let dir = setup(1, 1);
        GrayImage::from_pixel(6, 6, Luma([51])).save(dir.path().join("normal/grey.png")).unwrap();
        let r = load_folder(dir.path(), 4).unwrap();
        let grey = r.dataset.items.iter().find(|i| i.source.ends_with("grey.png")).unwrap();
        assert!(grey.image.data().iter().all(|&v| (v - 0.2).abs() < 1e-6));
    }

    #[test]
    fn corrupt_file_is_skipped() {
        let dir = setup(5, 4);
        fs::write(dir.path().join("abnormal/zz.png"), b"not an image").unwrap();
        fs::write(dir.path().join("abnormal/notes.txt"), b"ignored").unwrap();
        let r = load_folder(dir.path(), 4).unwrap();
        assert_eq!(r.dataset.len(), 9);
        assert_eq!(r.skipped.len(), 1);
    }

    #[test]
    fn empty_class_is_fatal() {
        let dir = setup(2, 0);
        assert!(matches!(load_folder(dir.path(), 4), Err(Error::Data(_))));
        assert!(load_folder(&dir.path().join("missing"), 4).is_err());
    }
}
