use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::check_training_set;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HingeConfig {
    pub learning_rate: f64,
    /// L2 penalty strength.
    pub alpha: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for HingeConfig {
    fn default() -> Self {
        HingeConfig { learning_rate: 0.01, alpha: 1e-4, epochs: 1000, seed: 0 }
    }
}

/// Linear separator trained by per-sample SGD on
/// `max(0, 1 - y (w.x + b)) + alpha/2 |w|^2` with `y` in {-1, +1}.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHinge {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearHinge {
    pub fn fit(x: &[Vec<f64>], y: &[u8], cfg: &HingeConfig) -> Result<LinearHinge> {
        check_training_set(x, y)?;
        if !(cfg.learning_rate > 0.0 && cfg.alpha >= 0.0) {
            return Err(Error::Config("hinge learning_rate must be positive and alpha non-negative".into()));
        }
        let d = x[0].len();
        let mut w = vec![0.0; d];
        let mut b = 0.0;
        let mut rng = Rng::new(cfg.seed);
        let lr = cfg.learning_rate;
        for _ in 0..cfg.epochs {
            for i in rng.permutation(x.len()) {
                let t = if y[i] == 1 { 1.0 } else { -1.0 };
                let margin = t * (dot(&w, &x[i]) + b);
                let shrink = 1.0 - lr * cfg.alpha;
                w.iter_mut().for_each(|v| *v *= shrink);
                if margin < 1.0 {
                    for (v, &xi) in w.iter_mut().zip(&x[i]) {
                        *v += lr * t * xi;
                    }
                    b += lr * t;
                }
            }
        }
        if !(w.iter().all(|v| v.is_finite()) && b.is_finite()) {
            return Err(Error::NonFinite { op: "hinge sgd" });
        }
        Ok(LinearHinge { weights: w, bias: b })
    }

    /// Signed margin `w.x + b`.
    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    /// Logistic link of the margin; used for ranking metrics only.
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        1.0 / (1.0 + (-self.decision(x)).exp())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_two_clusters() {
        let mut rng = Rng::new(5);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..40 {
            let label = (i % 2) as u8;
            let c = if label == 1 { 2.0 } else { -2.0 };
            x.push(vec![c + rng.uniform_range(-1.0, 1.0), -c + rng.uniform_range(-1.0, 1.0)]);
            y.push(label);
        }
        let m = LinearHinge::fit(&x, &y, &HingeConfig::default()).unwrap();
        for (r, &l) in x.iter().zip(&y) {
            assert_eq!((m.decision(r) >= 0.0) as u8, l);
            assert_eq!((m.predict_proba(r) >= 0.5) as u8, l);
        }
    }

    #[test]
    fn needs_both_classes() {
        assert!(LinearHinge::fit(&[vec![1.0]], &[0], &HingeConfig::default()).is_err());
    }
}
