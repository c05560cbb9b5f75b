//! Binary classification metrics with the abnormal class as positive.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability threshold on the abnormal class.
pub const THRESHOLD: f64 = 0.5;

/// Rows are the true class, columns the predicted class, both ordered
/// (normal, abnormal): `[[tn, fp], [fn, tp]]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion(pub [[u64; 2]; 2]);

impl Confusion {
    /// `labels[i]` is 1 for abnormal; predicted abnormal when
    /// `scores[i] >= THRESHOLD`.
    pub fn from_scores(labels: &[u8], scores: &[f64]) -> Confusion {
        let preds: Vec<u8> = scores.iter().map(|&s| (s >= THRESHOLD) as u8).collect();
        Confusion::from_predictions(labels, &preds)
    }

    pub fn from_predictions(labels: &[u8], preds: &[u8]) -> Confusion {
        let mut m = [[0u64; 2]; 2];
        for (&l, &p) in labels.iter().zip(preds) {
            m[l as usize][p as usize] += 1;
        }
        Confusion(m)
    }

    pub fn tn(&self) -> u64 {
        self.0[0][0]
    }
    pub fn fp(&self) -> u64 {
        self.0[0][1]
    }
    pub fn fn_(&self) -> u64 {
        self.0[1][0]
    }
    pub fn tp(&self) -> u64 {
        self.0[1][1]
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    pub fn add(&self, other: &Confusion) -> Confusion {
        let mut m = self.0;
        for r in 0..2 {
            for c in 0..2 {
                m[r][c] += other.0[r][c];
            }
        }
        Confusion(m)
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp() + self.tn(), self.total())
    }

    /// 0 when nothing is predicted abnormal.
    pub fn precision(&self) -> f64 {
        ratio(self.tp(), self.tp() + self.fp())
    }

    /// 0 when there are no abnormal items.
    pub fn recall(&self) -> f64 {
        ratio(self.tp(), self.tp() + self.fn_())
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    /// Cohen's kappa `(po - pe) / (1 - pe)`. When chance agreement is total
    /// (`pe == 1`, both raters used a single, identical class) agreement is
    /// perfect and kappa is taken as 1.
    pub fn kappa(&self) -> f64 {
        let n = self.total() as f64;
        if n == 0.0 {
            return 0.0;
        }
        let po = self.accuracy();
        let row = |r: usize| (self.0[r][0] + self.0[r][1]) as f64 / n;
        let col = |c: usize| (self.0[0][c] + self.0[1][c]) as f64 / n;
        let pe = row(0) * col(0) + row(1) * col(1);
        if pe >= 1.0 {
            1.0
        } else {
            (po - pe) / (1.0 - pe)
        }
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// One ROC vertex: `(threshold, fpr, tpr)`; an item is called abnormal when
/// its score is at least the threshold.
pub type RocPoint = (f64, f64, f64);

/// ROC vertices from the strictest threshold (`+inf`, nothing positive) to
/// the most lenient. Tied scores form a single step. `None` when either
/// class is absent.
pub fn roc_curve(labels: &[u8], scores: &[f64]) -> Option<Vec<RocPoint>> {
    let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(f64::INFINITY, 0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        points.push((s, fp / neg, tp / pos));
    }
    Some(points)
}

/// Area under the ROC curve by the trapezoid rule over all thresholds.
pub fn roc_auc(labels: &[u8], scores: &[f64]) -> Option<f64> {
    let pts = roc_curve(labels, scores)?;
    Some(pts.windows(2).map(|w| (w[1].1 - w[0].1) * (w[1].2 + w[0].2) / 2.0).sum())
}

/// Metrics for one evaluated set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub confusion: Confusion,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Absent when the set holds a single class.
    pub roc_auc: Option<f64>,
    pub kappa: f64,
}

impl Metrics {
    pub fn from_scores(labels: &[u8], scores: &[f64]) -> Result<Metrics> {
        if labels.is_empty() || labels.len() != scores.len() {
            return Err(Error::InvalidArgument(format!(
                "need equally many labels and scores, got {} and {}",
                labels.len(),
                scores.len()
            )));
        }
        let c = Confusion::from_scores(labels, scores);
        let mut m = Metrics::from_confusion(c);
        m.roc_auc = roc_auc(labels, scores);
        Ok(m)
    }

    pub fn from_confusion(c: Confusion) -> Metrics {
        Metrics {
            confusion: c,
            accuracy: c.accuracy(),
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
            roc_auc: None,
            kappa: c.kappa(),
        }
    }

    /// Fold aggregation: each metric is the mean over folds (AUC over the
    /// folds where it is defined) and confusion matrices are summed.
    pub fn mean_of(folds: &[Metrics]) -> Result<Metrics> {
        if folds.is_empty() {
            return Err(Error::InvalidArgument("no folds to aggregate".into()));
        }
        let n = folds.len() as f64;
        let mean = |f: fn(&Metrics) -> f64| folds.iter().map(f).sum::<f64>() / n;
        let aucs: Vec<f64> = folds.iter().filter_map(|m| m.roc_auc).collect();
        Ok(Metrics {
            confusion: folds.iter().fold(Confusion::default(), |a, m| a.add(&m.confusion)),
            accuracy: mean(|m| m.accuracy),
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
            f1: mean(|m| m.f1),
            roc_auc: if aucs.is_empty() { None } else { Some(aucs.iter().sum::<f64>() / aucs.len() as f64) },
            kappa: mean(|m| m.kappa),
        })
    }
}

/// ROC vertices as CSV `threshold,fpr,tpr`.
pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("threshold,fpr,tpr\n");
    for (t, f, p) in points {
        out.push_str(&format!("{t},{f},{p}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_confusion() {
        let c = Confusion([[40, 10], [10, 40]]);
        let m = Metrics::from_confusion(c);
        for v in [m.accuracy, m.precision, m.recall, m.f1] {
            assert!((v - 0.8).abs() < 1e-12);
        }
        assert!((m.kappa - 0.6).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictor() {
        let labels = [0, 0, 1, 1];
        let m = Metrics::from_scores(&labels, &[0.1, 0.2, 0.8, 0.9]).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1, m.kappa), (1.0, 1.0, 1.0, 1.0, 1.0));
        assert_eq!(m.roc_auc, Some(1.0));
    }

    #[test]
    fn rank_fixture() {
        let auc = roc_auc(&[1, 1, 0, 0], &[0.9, 0.8, 0.7, 0.1]).unwrap();
        assert_eq!(auc, 1.0);
        // one abnormal below one normal: 3 of 4 pairs concordant
        let auc = roc_auc(&[1, 1, 0, 0], &[0.9, 0.6, 0.7, 0.1]).unwrap();
        assert!((auc - 0.75).abs() < 1e-12);
        // a tie between classes counts half
        let auc = roc_auc(&[1, 1, 0, 0], &[0.9, 0.7, 0.7, 0.1]).unwrap();
        assert!((auc - 0.875).abs() < 1e-12);
    }

    #[test]
    fn single_class_has_no_auc() {
        let m = Metrics::from_scores(&[1, 1, 1], &[0.2, 0.7, 0.9]).unwrap();
        assert_eq!(m.roc_auc, None);
        assert!((m.accuracy - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_is_inclusive() {
        let c = Confusion::from_scores(&[1, 0], &[0.5, 0.49]);
        assert_eq!(c.0, [[1, 0], [0, 1]]);
    }

    #[test]
    fn kappa_of_constant_agreement() {
        assert_eq!(Confusion([[5, 0], [0, 0]]).kappa(), 1.0);
        assert_eq!(Confusion([[0, 5], [0, 0]]).kappa(), 0.0);
    }

    #[test]
    fn fold_means() {
        let a = Metrics::from_confusion(Confusion([[5, 0], [0, 5]]));
        let b = Metrics::from_confusion(Confusion([[4, 1], [1, 4]]));
        let m = Metrics::mean_of(&[a, b]).unwrap();
        assert_eq!(m.confusion.0, [[9, 1], [1, 9]]);
        assert!((m.accuracy - 0.9).abs() < 1e-12);
        assert!((m.kappa - (1.0 + 0.6) / 2.0).abs() < 1e-12);
    }
}
