//! Minibatch SGD training, evaluation, and the run artefacts they produce.

use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::checkpoint::save_checkpoint;
use crate::data::{batch_order, LabeledDataset};
use crate::error::{Error, Result};
use crate::metrics::{Metrics, RocPoint};
use crate::model::{count_params_and_flops, HybridModel, ParamStore};
use crate::nn::{self, Mode};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Evaluate on the validation set every this many epochs.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { learning_rate: 0.001, epochs: 100, batch_size: 16, seed: 0, eval_every: 1 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be finite and non-negative, got {}", self.learning_rate)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config("epochs, batch_size and eval_every must be positive".into()));
        }
        Ok(())
    }
}

/// `p <- p - lr * g` for every named gradient.
pub fn sgd_step<T: Real>(params: &mut ParamStore<T>, grads: &IndexMap<String, Tensor<T>>, lr: f64) -> Result<()> {
    for (name, g) in grads {
        let p = params.param(name)?;
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "{name}: parameter {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    let lr = T::of(lr);
    for (name, g) in grads {
        let p = params.param_mut(name)?;
        for (p, &g) in p.data_mut().iter_mut().zip(g.data()) {
            *p = *p - lr * g;
        }
    }
    Ok(())
}

/// Per-epoch summary. Training-set numbers come from the training-mode
/// forward passes made during the epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub acc: f64,
    pub pr: f64,
    pub re: f64,
    pub validation: Option<ValidationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub loss: f64,
    pub acc: f64,
    pub pr: f64,
    pub re: f64,
}

/// Training curves as CSV `epoch,loss,acc,pr,re`.
pub fn curves_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,loss,acc,pr,re\n");
    for r in records {
        out.push_str(&format!("{},{},{},{},{}\n", r.epoch, r.loss, r.acc, r.pr, r.re));
    }
    out
}

/// Validation curves in the same layout, for the epochs that were evaluated.
pub fn validation_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,loss,acc,pr,re\n");
    for r in records {
        if let Some(v) = &r.validation {
            out.push_str(&format!("{},{},{},{},{}\n", r.epoch, v.loss, v.acc, v.pr, v.re));
        }
    }
    out
}

fn label_bytes(d: &LabeledDataset, idx: &[usize]) -> Vec<u8> {
    idx.iter().map(|&i| d.items[i].label.index() as u8).collect()
}

fn abnormal_probs<T: Real>(logits: &Tensor<T>) -> Result<Vec<f64>> {
    Ok(logits.softmax_rows()?.data().chunks(2).map(|r| r[1].to_f64_lossy()).collect())
}

/// Eval-mode scores and mean cross-entropy of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub labels: Vec<u8>,
    /// Probability of the abnormal class.
    pub scores: Vec<f64>,
    pub loss: f64,
}

pub fn predict(model: &HybridModel<f32>, d: &LabeledDataset, batch_size: usize) -> Result<Predictions> {
    if d.is_empty() {
        return Err(Error::Data("cannot evaluate an empty dataset".into()));
    }
    let mut scores = Vec::with_capacity(d.len());
    let mut loss_sum = 0.0;
    for idx in batch_order(d.len(), batch_size, false, &mut Rng::new(0))? {
        let batch = d.batch(&idx)?;
        let mut tape = Tape::new();
        let x = tape.constant(batch.images);
        let out = model.forward(&mut tape, x, Mode::Eval)?;
        let loss = nn::softmax_cross_entropy(&mut tape, out.logits, &batch.labels)?;
        loss_sum += tape.value(loss).item()? as f64 * idx.len() as f64;
        scores.extend(abnormal_probs(tape.value(out.logits))?);
    }
    Ok(Predictions {
        labels: label_bytes(d, &(0..d.len()).collect::<Vec<_>>()),
        scores,
        loss: loss_sum / d.len() as f64,
    })
}

/// Full evaluation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub metrics: Metrics,
    pub n_items: usize,
    pub param_count: Option<usize>,
    pub flop_count: Option<u64>,
    /// How the numbers were obtained, e.g. "holdout" or "5-fold cross-validation".
    pub protocol: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curves: Option<Vec<EpochRecord>>,
    /// Per-fold metrics under cross-validation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub folds: Option<Vec<Metrics>>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Human-readable summary.
    pub fn table(&self) -> String {
        let m = &self.metrics;
        let c = m.confusion.0;
        let mut s = format!(
            "items      {}\nprotocol   {}\naccuracy   {:.4}\nprecision  {:.4}\nrecall     {:.4}\nf1         {:.4}\nroc_auc    {}\nkappa      {:.4}\nconfusion  [[{}, {}], [{}, {}]] (rows true normal/abnormal)\n",
            self.n_items,
            self.protocol,
            m.accuracy,
            m.precision,
            m.recall,
            m.f1,
            m.roc_auc.map_or("n/a (single class)".to_string(), |a| format!("{a:.4}")),
            m.kappa,
            c[0][0],
            c[0][1],
            c[1][0],
            c[1][1],
        );
        if let (Some(p), Some(f)) = (self.param_count, self.flop_count) {
            s.push_str(&format!("params     {p}\nflops      {f}\n"));
        }
        s
    }
}

/// Holdout evaluation of a model; also returns the ROC vertices when both
/// classes are present.
pub fn evaluate(model: &HybridModel<f32>, d: &LabeledDataset, batch_size: usize) -> Result<(EvalReport, Option<Vec<RocPoint>>)> {
    let p = predict(model, d, batch_size)?;
    let counts = count_params_and_flops(model.config());
    let report = EvalReport {
        metrics: Metrics::from_scores(&p.labels, &p.scores)?,
        n_items: d.len(),
        param_count: Some(counts.params),
        flop_count: Some(counts.flops),
        protocol: "holdout".into(),
        curves: None,
        folds: None,
    };
    Ok((report, crate::metrics::roc_curve(&p.labels, &p.scores)))
}

/// Loss, gradients and batch statistics of one training-mode minibatch.
pub struct StepOutput {
    pub loss: f64,
    pub scores: Vec<f64>,
}

/// Stateful epoch loop over a fixed training set.
pub struct Trainer {
    model: HybridModel<f32>,
    cfg: TrainConfig,
    rng: Rng,
    train: LabeledDataset,
    validation: Option<LabeledDataset>,
    records: Vec<EpochRecord>,
    best: Option<(f64, HybridModel<f32>)>,
}

impl Trainer {
    pub fn new(
        model: HybridModel<f32>,
        train: LabeledDataset,
        validation: Option<LabeledDataset>,
        cfg: TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        let rng = Rng::new(cfg.seed).fork(0x7472_6169_6e);
        Ok(Trainer { model, cfg, rng, train, validation, records: Vec::new(), best: None })
    }

    pub fn model(&self) -> &HybridModel<f32> {
        &self.model
    }

    pub fn into_model(self) -> HybridModel<f32> {
        self.model
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    /// Highest validation accuracy seen and the model that reached it
    /// (earliest epoch on ties).
    pub fn best(&self) -> Option<(f64, &HybridModel<f32>)> {
        self.best.as_ref().map(|(a, m)| (*a, m))
    }

    fn step(&mut self, epoch: usize, batch_no: usize, idx: &[usize]) -> Result<StepOutput> {
        let batch = self.train.batch(idx)?;
        let blame = |e: Error, train: &LabeledDataset| match e {
            Error::NonFinite { op } => Error::NonFiniteLoss {
                epoch,
                batch: batch_no,
                items: format!(
                    "{} [first non-finite value from {op}]",
                    idx.iter().map(|&i| train.items[i].source.display().to_string()).collect::<Vec<_>>().join(", ")
                ),
            },
            other => other,
        };
        let mut tape = Tape::new();
        let x = tape.constant(batch.images);
        let run = |tape: &mut Tape<f32>| -> Result<_> {
            let out = self.model.forward(tape, x, Mode::Train)?;
            let loss = nn::softmax_cross_entropy(tape, out.logits, &batch.labels)?;
            let grads = out.param_grads(&tape.backward(loss)?);
            Ok((out, loss, grads))
        };
        let (out, loss, grads) = run(&mut tape).map_err(|e| blame(e, &self.train))?;
        let loss_value = tape.value(loss).item()? as f64;
        let scores = abnormal_probs(tape.value(out.logits))?;
        sgd_step(self.model.store_mut(), &grads, self.cfg.learning_rate)?;
        self.model.commit_bn(&out.bn_stats)?;
        Ok(StepOutput { loss: loss_value, scores })
    }

    /// One pass over the shuffled training set; returns its record.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let epoch = self.records.len() + 1;
        let order = batch_order(self.train.len(), self.cfg.batch_size, true, &mut self.rng)?;
        let mut loss_sum = 0.0;
        let mut labels = Vec::with_capacity(self.train.len());
        let mut scores = Vec::with_capacity(self.train.len());
        for (b, idx) in order.iter().enumerate() {
            let s = self.step(epoch, b + 1, idx)?;
            loss_sum += s.loss * idx.len() as f64;
            labels.extend(label_bytes(&self.train, idx));
            scores.extend(s.scores);
        }
        let m = Metrics::from_scores(&labels, &scores)?;
        let validation = match &self.validation {
            Some(v) if !v.is_empty() && epoch % self.cfg.eval_every == 0 => {
                let p = predict(&self.model, v, self.cfg.batch_size)?;
                let vm = Metrics::from_scores(&p.labels, &p.scores)?;
                if self.best.as_ref().is_none_or(|(a, _)| vm.accuracy > *a) {
                    self.best = Some((vm.accuracy, self.model.clone()));
                }
                Some(ValidationRecord { loss: p.loss, acc: vm.accuracy, pr: vm.precision, re: vm.recall })
            }
            _ => None,
        };
        let record = EpochRecord {
            epoch,
            loss: loss_sum / self.train.len() as f64,
            acc: m.accuracy,
            pr: m.precision,
            re: m.recall,
            validation,
        };
        log::info!("epoch {epoch}: loss {:.5} acc {:.4}", record.loss, record.acc);
        self.records.push(record.clone());
        Ok(record)
    }
}

/// Files written by [`train`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub best_checkpoint: Option<PathBuf>,
    pub curves: PathBuf,
    pub validation_curves: Option<PathBuf>,
}

/// `<path><suffix>`, e.g. `model.ckpt` -> `model.ckpt.best`.
pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Runs `cfg.epochs` epochs and, when `out` is given, writes the final
/// checkpoint to `out`, the best-validation checkpoint to `<out>.best`, and
/// the curves to `<out>.curves.csv` / `<out>.val.csv`.
pub fn train(
    model: HybridModel<f32>,
    train_set: LabeledDataset,
    validation: Option<LabeledDataset>,
    cfg: &TrainConfig,
    out: Option<&Path>,
) -> Result<(HybridModel<f32>, Vec<EpochRecord>, Option<TrainArtifacts>)> {
    let mut t = Trainer::new(model, train_set, validation, cfg.clone())?;
    for _ in 0..cfg.epochs {
        t.run_epoch()?;
    }
    let artifacts = match out {
        Some(path) => {
            save_checkpoint(t.model(), path)?;
            let best_checkpoint = match t.best() {
                Some((_, m)) => {
                    let p = with_suffix(path, ".best");
                    save_checkpoint(m, &p)?;
                    Some(p)
                }
                None => None,
            };
            let curves = with_suffix(path, ".curves.csv");
            std::fs::write(&curves, curves_csv(t.records())).map_err(|e| Error::io(&curves, e))?;
            let validation_curves = if t.records().iter().any(|r| r.validation.is_some()) {
                let p = with_suffix(path, ".val.csv");
                std::fs::write(&p, validation_csv(t.records())).map_err(|e| Error::io(&p, e))?;
                Some(p)
            } else {
                None
            };
            Some(TrainArtifacts { checkpoint: path.to_path_buf(), best_checkpoint, curves, validation_curves })
        }
        None => None,
    };
    let records = t.records().to_vec();
    Ok((t.into_model(), records, artifacts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert_param("p", Tensor::scalar(v));
        s
    }

    fn grads(v: f64) -> IndexMap<String, Tensor<f64>> {
        IndexMap::from([("p".to_string(), Tensor::scalar(v))])
    }

    #[test]
    fn single_step() {
        let mut s = store(1.0);
        sgd_step(&mut s, &grads(2.0), 0.001).unwrap();
        assert_eq!(s.param("p").unwrap().item().unwrap(), 0.998);
        sgd_step(&mut s, &grads(0.0), 0.001).unwrap();
        assert_eq!(s.param("p").unwrap().item().unwrap(), 0.998);
    }

    #[test]
    fn quadratic_bowl_decays_geometrically() {
        let mut s = store(1.0);
        for _ in 0..1000 {
            let p = s.param("p").unwrap().item().unwrap();
            sgd_step(&mut s, &grads(2.0 * p), 0.001).unwrap();
        }
        let p = s.param("p").unwrap().item().unwrap();
        let closed = (1.0f64 - 2.0 * 0.001).powi(1000);
        assert!(p.abs() < 0.2);
        assert!((p - closed).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut s = store(1.0);
        let g = IndexMap::from([("p".to_string(), Tensor::<f64>::zeros(&[2]))]);
        assert!(sgd_step(&mut s, &g, 0.1).is_err());
        let g = IndexMap::from([("q".to_string(), Tensor::<f64>::zeros(&[]))]);
        assert!(sgd_step(&mut s, &g, 0.1).is_err());
    }

    #[test]
    fn curves_header() {
        let r = EpochRecord { epoch: 1, loss: 0.5, acc: 0.75, pr: 1.0, re: 0.5, validation: None };
        assert_eq!(curves_csv(&[r]), "epoch,loss,acc,pr,re\n1,0.5,0.75,1,0.5\n");
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: f64::NAN, ..Default::default() }.validate().is_err());
    }
}
