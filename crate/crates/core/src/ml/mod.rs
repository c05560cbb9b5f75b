//! Classical classifiers trained on the network's 128-d penultimate
//! features.

mod forest;
mod hinge;
mod knn;

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_tensors, write_tensors};
use crate::data::{batch_order, Label, LabeledDataset};
use crate::error::{Error, Result};
use crate::metrics::Metrics;
use crate::model::{HybridModel, FEATURE_LENGTH};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::train::EvalReport;

pub use forest::{ForestConfig, RandomForest, Tree};
pub use hinge::{HingeConfig, LinearHinge};
pub use knn::{Knn, KnnConfig};

/// Downstream classifiers that are deliberately not provided.
pub const NOT_IMPLEMENTED: [&str; 3] = ["svm_cubic", "gradient_boosting", "adaboost"];

pub(crate) fn check_training_set(x: &[Vec<f64>], y: &[u8]) -> Result<()> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::InvalidArgument(format!("{} rows but {} labels", x.len(), y.len())));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("feature rows must share a non-zero length".into()));
    }
    if !x.iter().flatten().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { op: "feature table" });
    }
    if !(y.contains(&0) && y.contains(&1)) {
        return Err(Error::Data("training rows hold a single class".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub label: Label,
    pub path: String,
    pub features: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureTable {
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn matrix(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.features.iter().map(|&v| v as f64).collect()).collect()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.rows.iter().map(|r| r.label.index() as u8).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> FeatureTable {
        FeatureTable { rows: idx.iter().map(|&i| self.rows[i].clone()).collect() }
    }

    /// CSV with header `label,path,f0,...,f127`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let d = self.rows.first().map_or(FEATURE_LENGTH, |r| r.features.len());
        let mut header = vec!["label".to_string(), "path".to_string()];
        header.extend((0..d).map(|i| format!("f{i}")));
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![r.label.to_string(), r.path.clone()];
            rec.extend(r.features.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<FeatureTable> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers().map_err(csv_err)?.clone();
        if header.len() < 3 || &header[0] != "label" || &header[1] != "path" {
            return Err(Error::Data("feature table header must start with label,path".into()));
        }
        let mut rows = Vec::new();
        for (n, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let label = match &rec[0] {
                "normal" | "0" => Label::Normal,
                "abnormal" | "1" => Label::Abnormal,
                other => return Err(Error::Data(format!("row {}: unknown label {other:?}", n + 1))),
            };
            let features = rec
                .iter()
                .skip(2)
                .map(|v| v.parse::<f32>().map_err(|e| Error::Data(format!("row {}: {e}", n + 1))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(FeatureRow { label, path: rec[1].to_string(), features });
        }
        Ok(FeatureTable { rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<FeatureTable> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        FeatureTable::from_csv(&text)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Data(format!("csv: {e}"))
}

/// Eval-mode penultimate activations of every item, in dataset order. The
/// head widths are fixed by config validation, so rows are always 128 long.
pub fn extract_features(model: &HybridModel<f32>, d: &LabeledDataset, batch_size: usize) -> Result<FeatureTable> {
    let mut rows = Vec::with_capacity(d.len());
    for idx in batch_order(d.len(), batch_size, false, &mut Rng::new(0))? {
        let f = model.features(&d.batch(&idx)?.images)?;
        for (&i, feats) in idx.iter().zip(f.data().chunks(FEATURE_LENGTH)) {
            let item = &d.items[i];
            rows.push(FeatureRow { label: item.label, path: item.source.display().to_string(), features: feats.to_vec() });
        }
    }
    Ok(FeatureTable { rows })
}

/// Choice of downstream classifier with its settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierSpec {
    RandomForest(ForestConfig),
    Knn(KnnConfig),
    LinearHinge(HingeConfig),
}

impl ClassifierSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ClassifierSpec::RandomForest(_) => "random_forest",
            ClassifierSpec::Knn(_) => "knn",
            ClassifierSpec::LinearHinge(_) => "linear_hinge",
        }
    }

    pub fn fit(&self, t: &FeatureTable) -> Result<Classifier> {
        let (x, y) = (t.matrix(), t.labels());
        Ok(match self {
            ClassifierSpec::RandomForest(c) => Classifier::RandomForest(RandomForest::fit(&x, &y, c)?),
            ClassifierSpec::Knn(c) => Classifier::Knn(Knn::fit(&x, &y, c)?),
            ClassifierSpec::LinearHinge(c) => Classifier::LinearHinge(LinearHinge::fit(&x, &y, c)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    RandomForest(RandomForest),
    Knn(Knn),
    LinearHinge(LinearHinge),
}

fn vec_tensor(v: Vec<f64>) -> Tensor<f64> {
    Tensor::new(&[v.len()], v).expect("1-d")
}

fn as_index(v: f64, what: &str) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(Error::Checkpoint(format!("{what}: {v} is not an index")))
    }
}

impl Classifier {
    pub fn name(&self) -> &'static str {
        match self {
            Classifier::RandomForest(_) => "random_forest",
            Classifier::Knn(_) => "knn",
            Classifier::LinearHinge(_) => "linear_hinge",
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        match self {
            Classifier::RandomForest(m) => m.predict_proba(x),
            Classifier::Knn(m) => m.predict_proba(x),
            Classifier::LinearHinge(m) => m.predict_proba(x),
        }
    }

    pub fn scores(&self, t: &FeatureTable) -> Vec<f64> {
        t.matrix().iter().map(|r| self.predict_proba(r)).collect()
    }

    /// Named tensors for the checkpoint container.
    pub fn to_tensors(&self) -> IndexMap<String, Tensor<f64>> {
        let mut m = IndexMap::new();
        match self {
            Classifier::RandomForest(f) => {
                m.insert("rf.n_features".into(), Tensor::scalar(f.n_features as f64));
                for (i, t) in f.trees.iter().enumerate() {
                    let feat = t.feature.iter().map(|f| f.map_or(-1.0, |v| v as f64)).collect();
                    m.insert(format!("rf.{i}.feature"), vec_tensor(feat));
                    m.insert(format!("rf.{i}.threshold"), vec_tensor(t.threshold.clone()));
                    m.insert(format!("rf.{i}.left"), vec_tensor(t.left.iter().map(|&v| v as f64).collect()));
                    m.insert(format!("rf.{i}.right"), vec_tensor(t.right.iter().map(|&v| v as f64).collect()));
                    m.insert(format!("rf.{i}.value"), vec_tensor(t.value.clone()));
                }
            }
            Classifier::Knn(k) => {
                let d = k.x[0].len();
                m.insert("knn.k".into(), Tensor::scalar(k.k as f64));
                m.insert("knn.x".into(), Tensor::new(&[k.x.len(), d], k.x.concat()).expect("rectangular"));
                m.insert("knn.y".into(), vec_tensor(k.y.iter().map(|&v| v as f64).collect()));
            }
            Classifier::LinearHinge(h) => {
                m.insert("hinge.weights".into(), vec_tensor(h.weights.clone()));
                m.insert("hinge.bias".into(), Tensor::scalar(h.bias));
            }
        }
        m
    }

    pub fn from_tensors(m: &IndexMap<String, Tensor<f64>>) -> Result<Classifier> {
        let get = |k: &str| m.get(k).ok_or_else(|| Error::Checkpoint(format!("missing tensor {k}")));
        let first = m.keys().next().ok_or_else(|| Error::Checkpoint("empty classifier file".into()))?;
        if first.starts_with("rf.") {
            let n_features = as_index(get("rf.n_features")?.item()?, "rf.n_features")?;
            let mut trees = Vec::new();
            while m.contains_key(&format!("rf.{}.feature", trees.len())) {
                let i = trees.len();
                let col = |k: &str| get(&format!("rf.{i}.{k}")).map(|t| t.data().to_vec());
                let idx = |k: &str| -> Result<Vec<usize>> { col(k)?.into_iter().map(|v| as_index(v, k)).collect() };
                let feature = col("feature")?
                    .into_iter()
                    .map(|v| if v < 0.0 { Ok(None) } else { as_index(v, "feature").map(Some) })
                    .collect::<Result<Vec<_>>>()?;
                let t = Tree { feature, threshold: col("threshold")?, left: idx("left")?, right: idx("right")?, value: col("value")? };
                let n = t.len();
                if [t.threshold.len(), t.left.len(), t.right.len(), t.value.len()].iter().any(|&l| l != n)
                    || t.feature.iter().zip(t.left.iter().zip(&t.right)).any(|(f, (&l, &r))| {
                        f.is_some_and(|f| f >= n_features) || (f.is_some() && (l >= n || r >= n))
                    })
                {
                    return Err(Error::Checkpoint(format!("tree {i} is malformed")));
                }
                trees.push(t);
            }
            if trees.is_empty() {
                return Err(Error::Checkpoint("forest has no trees".into()));
            }
            Ok(Classifier::RandomForest(RandomForest { trees, n_features }))
        } else if first.starts_with("knn.") {
            let x = get("knn.x")?;
            let [n, d] = *x.shape() else {
                return Err(Error::Checkpoint("knn.x must be 2-d".into()));
            };
            let y = get("knn.y")?.data().iter().map(|&v| as_index(v, "knn.y").map(|v| v as u8)).collect::<Result<Vec<_>>>()?;
            let k = as_index(get("knn.k")?.item()?, "knn.k")?;
            if y.len() != n || k == 0 || k > n {
                return Err(Error::Checkpoint("knn tensors are inconsistent".into()));
            }
            Ok(Classifier::Knn(Knn { k, x: x.data().chunks(d).map(<[f64]>::to_vec).collect(), y }))
        } else if first.starts_with("hinge.") {
            Ok(Classifier::LinearHinge(LinearHinge {
                weights: get("hinge.weights")?.data().to_vec(),
                bias: get("hinge.bias")?.item()?,
            }))
        } else {
            Err(Error::Checkpoint(format!("unrecognised classifier tensor {first}")))
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let t = self.to_tensors();
        write_tensors(path, t.iter().map(|(k, v)| (k.as_str(), v)))
    }

    pub fn load(path: &Path) -> Result<Classifier> {
        Classifier::from_tensors(&read_tensors(path)?)
    }
}

pub fn evaluate_downstream(c: &Classifier, t: &FeatureTable) -> Result<EvalReport> {
    if t.is_empty() {
        return Err(Error::Data("cannot evaluate an empty feature table".into()));
    }
    Ok(EvalReport {
        metrics: Metrics::from_scores(&t.labels(), &c.scores(t))?,
        n_items: t.len(),
        param_count: None,
        flop_count: None,
        protocol: "holdout".into(),
        curves: None,
        folds: None,
    })
}

/// Stratified fold assignment: each class is shuffled and dealt round-robin,
/// so fold sizes differ by at most one per class. Each fold is sorted.
pub fn stratified_folds(labels: &[u8], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > labels.len() {
        return Err(Error::InvalidArgument(format!("cannot make {k} folds from {} rows", labels.len())));
    }
    let mut rng = Rng::new(seed);
    let mut folds = vec![Vec::new(); k];
    let mut slot = 0;
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        rng.shuffle(&mut idx);
        for i in idx {
            folds[slot % k].push(i);
            slot += 1;
        }
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}

/// K-fold cross-validation. The report holds fold-mean metrics, summed
/// confusion matrices and the per-fold metrics.
pub fn cross_validate(spec: &ClassifierSpec, t: &FeatureTable, k: usize, seed: u64) -> Result<EvalReport> {
    let folds = stratified_folds(&t.labels(), k, seed)?;
    let mut per_fold = Vec::with_capacity(k);
    for (f, test_idx) in folds.iter().enumerate() {
        let train_idx: Vec<usize> = folds.iter().enumerate().filter(|(g, _)| *g != f).flat_map(|(_, v)| v.iter().copied()).collect();
        let model = spec.fit(&t.subset(&train_idx))?;
        let test = t.subset(test_idx);
        per_fold.push(Metrics::from_scores(&test.labels(), &model.scores(&test))?);
    }
    Ok(EvalReport {
        metrics: Metrics::mean_of(&per_fold)?,
        n_items: t.len(),
        param_count: None,
        flop_count: None,
        protocol: format!("{k}-fold cross-validation"),
        curves: None,
        folds: Some(per_fold),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(n: usize) -> FeatureTable {
        FeatureTable {
            rows: (0..n)
                .map(|i| {
                    let label = if i % 2 == 0 { Label::Normal } else { Label::Abnormal };
                    let mut features = vec![0.25f32; 4];
                    features[0] = label.index() as f32 * 2.0 - 1.0 + i as f32 * 1e-3;
                    FeatureRow { label, path: format!("img/{i}, copy.png"), features }
                })
                .collect(),
        }
    }

    #[test]
    fn csv_round_trip() {
        let mut t = table(6);
        t.rows[0].features[1] = 0.1 + f32::EPSILON;
        let text = t.to_csv().unwrap();
        assert!(text.starts_with("label,path,f0,f1,f2,f3\n"));
        assert_eq!(FeatureTable::from_csv(&text).unwrap(), t);
    }

    #[test]
    fn partition_law() {
        let labels: Vec<u8> = (0..100).map(|i| (i % 2) as u8).collect();
        let folds = stratified_folds(&labels, 5, 1).unwrap();
        assert!(folds.iter().all(|f| f.len() == 20));
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn perfect_feature_cross_validates() {
        let t = table(40);
        for spec in [
            ClassifierSpec::RandomForest(ForestConfig { n_trees: 10, ..Default::default() }),
            ClassifierSpec::Knn(KnnConfig::default()),
            ClassifierSpec::LinearHinge(HingeConfig { epochs: 50, ..Default::default() }),
        ] {
            let r = cross_validate(&spec, &t, 5, 0).unwrap();
            assert_eq!(r.metrics.accuracy, 1.0, "{}", spec.name());
            assert_eq!(r.metrics.confusion.total(), 40);
            let folds = r.folds.as_ref().unwrap();
            let hand = folds.iter().map(|m| m.f1).sum::<f64>() / folds.len() as f64;
            assert_eq!(r.metrics.f1, hand);
        }
    }

    #[test]
    fn classifier_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = table(20);
        for spec in [
            ClassifierSpec::RandomForest(ForestConfig { n_trees: 4, ..Default::default() }),
            ClassifierSpec::Knn(KnnConfig { k: 3 }),
            ClassifierSpec::LinearHinge(HingeConfig { epochs: 5, ..Default::default() }),
        ] {
            let m = spec.fit(&t).unwrap();
            let p = dir.path().join(spec.name());
            m.save(&p).unwrap();
            assert_eq!(Classifier::load(&p).unwrap(), m);
        }
    }
}
