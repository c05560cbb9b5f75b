//! Labeled image datasets: folder ingestion, augmentation, balancing,
//! stratified splits and batching.

mod augment;
mod load;
mod synthetic;

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub use augment::{augment_to_target, Transform, DEFAULT_NOISE_SIGMA};
pub use load::{image_to_tensor, load_folder, load_image, LoadReport};
pub use synthetic::{color_image, synthetic_color_dataset, write_synthetic_folder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal = 0,
    Abnormal = 1,
}

impl Label {
    pub const BOTH: [Label; 2] = [Label::Normal, Label::Abnormal];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::Normal),
            1 => Some(Label::Abnormal),
            _ => None,
        }
    }

    /// Folder name under a dataset root.
    pub fn dir_name(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Abnormal => "abnormal",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    /// `[3, S, S]`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    pub label: Label,
    /// File the image (or the original it was derived from) came from.
    pub source: PathBuf,
    /// Set on synthetic items produced by augmentation.
    pub augmentation: Option<Transform>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledDataset {
    pub items: Vec<Item>,
}

impl LabeledDataset {
    pub fn new(items: Vec<Item>) -> Self {
        LabeledDataset { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.items.iter().filter(|i| i.label == label).count()
    }

    pub fn indices_of(&self, label: Label) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.items[i].label == label).collect()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.items.iter().map(|i| i.label).collect()
    }

    /// Side length of the (square) images; `None` when empty.
    pub fn image_size(&self) -> Option<usize> {
        self.items.first().map(|i| i.image.shape()[2])
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset::new(indices.iter().map(|&i| self.items[i].clone()).collect())
    }

    /// Images `[N, 3, S, S]` and one-hot labels `[N, 2]` of the given items.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let images: Vec<&Tensor<f32>> = indices.iter().map(|&i| &self.items[i].image).collect();
        let images = Tensor::stack(&images)?;
        let mut onehot = vec![0.0f32; indices.len() * 2];
        for (r, &i) in indices.iter().enumerate() {
            onehot[r * 2 + self.items[i].label.index()] = 1.0;
        }
        Ok(Batch {
            images,
            labels: Tensor::new(&[indices.len(), 2], onehot)?,
            indices: indices.to_vec(),
        })
    }
}

/// Keeps `target` items of `label`, drawn uniformly without replacement;
/// other classes and the relative order of kept items are unchanged.
pub fn subsample_class(d: &LabeledDataset, label: Label, target: usize, rng: &mut Rng) -> Result<LabeledDataset> {
    let idx = d.indices_of(label);
    if target > idx.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot keep {target} {label} items, only {} present",
            idx.len()
        )));
    }
    let mut keep = vec![true; d.len()];
    let perm = rng.permutation(idx.len());
    for &p in &perm[target..] {
        keep[idx[p]] = false;
    }
    Ok(LabeledDataset::new(
        d.items.iter().zip(keep).filter(|(_, k)| *k).map(|(i, _)| i.clone()).collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train_fraction: 0.8, seed: 0, stratified: true }
    }
}

/// Index sets of a split; both sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Partitions item indices. With stratification each class contributes
/// `round(n_class * train_fraction)` items to train, so class ratios are
/// preserved to within one item.
pub fn split_indices(d: &LabeledDataset, s: &SplitSpec) -> Result<SplitIndices> {
    if !(s.train_fraction > 0.0 && s.train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train_fraction must be in (0, 1), got {}",
            s.train_fraction
        )));
    }
    for l in Label::BOTH {
        if d.count(l) < 2 {
            return Err(Error::Data(format!("need at least 2 {l} items to split, have {}", d.count(l))));
        }
    }
    let mut rng = Rng::new(s.seed);
    let groups: Vec<Vec<usize>> = if s.stratified {
        Label::BOTH.iter().map(|&l| d.indices_of(l)).collect()
    } else {
        vec![(0..d.len()).collect()]
    };
    let mut train = Vec::new();
    let mut test = Vec::new();
    for g in groups {
        let perm = rng.permutation(g.len());
        let k = ((g.len() as f64) * s.train_fraction).round() as usize;
        let k = k.clamp(1, g.len() - 1);
        train.extend(perm[..k].iter().map(|&p| g[p]));
        test.extend(perm[k..].iter().map(|&p| g[p]));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test })
}

pub fn split(d: &LabeledDataset, s: &SplitSpec) -> Result<(LabeledDataset, LabeledDataset)> {
    let idx = split_indices(d, s)?;
    Ok((d.subset(&idx.train), d.subset(&idx.test)))
}

/// One minibatch.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[N, 3, S, S]`
    pub images: Tensor<f32>,
    /// One-hot `[N, 2]`, columns (normal, abnormal).
    pub labels: Tensor<f32>,
    /// Dataset positions of the rows.
    pub indices: Vec<usize>,
}

/// Index groups for one pass: dataset order, or a seeded shuffle. The last
/// batch may be partial.
pub fn batch_order(len: usize, batch_size: usize, shuffle: bool, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
    }
    let order = if shuffle { rng.permutation(len) } else { (0..len).collect() };
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Iterator over assembled minibatches.
pub fn batches<'a>(
    d: &'a LabeledDataset,
    batch_size: usize,
    shuffle: bool,
    rng: &mut Rng,
) -> Result<impl Iterator<Item = Result<Batch>> + 'a> {
    let order = batch_order(d.len(), batch_size, shuffle, rng)?;
    Ok(order.into_iter().map(move |idx| d.batch(&idx)))
}

/// End-to-end preparation of a loaded dataset for training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepareSpec {
    /// Keep this many normal items before splitting.
    pub subsample_normal: Option<usize>,
    pub split: SplitSpec,
    /// Stratified share of the training side held out for validation
    /// curves and best-checkpoint selection; 0 disables it.
    pub validation_fraction: f64,
    /// Grow each class of the remaining training side to this size.
    pub augment_per_class: Option<usize>,
    pub noise_sigma: f64,
}

impl Default for PrepareSpec {
    fn default() -> Self {
        PrepareSpec {
            subsample_normal: None,
            split: SplitSpec::default(),
            validation_fraction: 0.1,
            augment_per_class: None,
            noise_sigma: DEFAULT_NOISE_SIGMA,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub train: LabeledDataset,
    pub validation: Option<LabeledDataset>,
    pub test: LabeledDataset,
}

impl Prepared {
    pub fn manifest(&self) -> Vec<ManifestRow> {
        let mut rows = manifest_rows(&self.train, "train");
        if let Some(v) = &self.validation {
            rows.extend(manifest_rows(v, "validation"));
        }
        rows.extend(manifest_rows(&self.test, "test"));
        rows
    }
}

/// Subsample normals, split, carve the validation slice off the training
/// side, then augment what is left of it. The test and validation sets never
/// see augmented items.
pub fn prepare(d: &LabeledDataset, p: &PrepareSpec) -> Result<Prepared> {
    let root = Rng::new(p.split.seed);
    let d = match p.subsample_normal {
        Some(n) => subsample_class(d, Label::Normal, n, &mut root.fork(1))?,
        None => d.clone(),
    };
    let (train, test) = split(&d, &p.split)?;
    let (train, validation) = if p.validation_fraction > 0.0 {
        let s = SplitSpec {
            train_fraction: 1.0 - p.validation_fraction,
            seed: root.fork(2).seed(),
            stratified: true,
        };
        let (t, v) = split(&train, &s)?;
        (t, Some(v))
    } else {
        (train, None)
    };
    let train = match p.augment_per_class {
        Some(target) => augment_to_target(&train, target, p.noise_sigma, &mut root.fork(3))?,
        None => train,
    };
    Ok(Prepared { train, validation, test })
}

/// Dataset census row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestRow {
    pub path: String,
    pub label: Label,
    pub augmentation_tag: String,
    pub split: String,
}

pub fn manifest_rows(d: &LabeledDataset, split_name: &str) -> Vec<ManifestRow> {
    d.items
        .iter()
        .map(|i| ManifestRow {
            path: i.source.display().to_string(),
            label: i.label,
            augmentation_tag: i.augmentation.map_or("original".to_string(), |t| t.tag().to_string()),
            split: split_name.to_string(),
        })
        .collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// CSV with header `path,label,augmentation_tag,split`.
pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut out = String::from("path,label,augmentation_tag,split\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            csv_field(&r.path),
            r.label,
            r.augmentation_tag,
            csv_field(&r.split)
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy(normal: usize, abnormal: usize) -> LabeledDataset {
        let mut items = Vec::new();
        for (label, n) in [(Label::Normal, normal), (Label::Abnormal, abnormal)] {
            for i in 0..n {
                items.push(Item {
                    image: Tensor::full(&[3, 2, 2], i as f32 / 1000.0),
                    label,
                    source: PathBuf::from(format!("{label}/{i:05}.png")),
                    augmentation: None,
                });
            }
        }
        LabeledDataset::new(items)
    }

    #[test]
    fn stratified_split_of_hundred() {
        let d = toy(50, 50);
        let (train, test) = split(&d, &SplitSpec::default()).unwrap();
        assert_eq!((train.count(Label::Normal), train.count(Label::Abnormal)), (40, 40));
        assert_eq!((test.count(Label::Normal), test.count(Label::Abnormal)), (10, 10));
    }

    #[test]
    fn split_needs_two_per_class() {
        assert!(split(&toy(1, 5), &SplitSpec::default()).is_err());
    }

    #[test]
    fn partial_last_batch_is_kept() {
        let d = toy(5, 5);
        let b: Vec<Batch> = batches(&d, 16, false, &mut Rng::new(0)).unwrap().map(Result::unwrap).collect();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].images.shape(), &[10, 3, 2, 2]);
        assert_eq!(b[0].indices, (0..10).collect::<Vec<_>>());
        let sizes: Vec<usize> = batch_order(10, 4, true, &mut Rng::new(1)).unwrap().iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn onehot_labels() {
        let d = toy(1, 1);
        let b = d.batch(&[1, 0]).unwrap();
        assert_eq!(b.labels.data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn subsample_keeps_target() {
        let d = toy(20, 3);
        let s = subsample_class(&d, Label::Normal, 7, &mut Rng::new(4)).unwrap();
        assert_eq!((s.count(Label::Normal), s.count(Label::Abnormal)), (7, 3));
        let again = subsample_class(&d, Label::Normal, 7, &mut Rng::new(4)).unwrap();
        assert_eq!(s, again);
        let all = subsample_class(&d, Label::Normal, 20, &mut Rng::new(9)).unwrap();
        assert_eq!(all, d);
        assert!(subsample_class(&d, Label::Abnormal, 4, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn prepare_keeps_test_side_original() {
        let d = toy(60, 20);
        let spec = PrepareSpec { subsample_normal: Some(30), augment_per_class: Some(40), ..Default::default() };
        let p = prepare(&d, &spec).unwrap();
        assert_eq!((p.test.count(Label::Normal), p.test.count(Label::Abnormal)), (6, 4));
        let v = p.validation.as_ref().unwrap();
        assert_eq!((v.count(Label::Normal), v.count(Label::Abnormal)), (2, 2));
        assert_eq!((p.train.count(Label::Normal), p.train.count(Label::Abnormal)), (40, 40));
        assert!(p.test.items.iter().chain(&v.items).all(|i| i.augmentation.is_none()));
        let held_out: Vec<_> = p.test.items.iter().chain(&v.items).map(|i| &i.source).collect();
        assert!(p.train.items.iter().all(|i| !held_out.contains(&&i.source)));
        assert_eq!(p, prepare(&d, &spec).unwrap());
        assert_eq!(p.manifest().len(), 80 + 4 + 10);
    }

    #[test]
    fn manifest_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_manifest(&p, &manifest_rows(&toy(1, 1), "train")).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert_eq!(
            text,
            "path,label,augmentation_tag,split\nnormal/00000.png,normal,original,train\nabnormal/00000.png,abnormal,original,train\n"
        );
    }
}
