use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::check_training_set;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Features examined per split; `None` means `floor(sqrt(d))`.
    pub max_features: Option<usize>,
    /// `None` grows until leaves are pure or unsplittable.
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { n_trees: 100, max_features: None, max_depth: None, bootstrap: true, seed: 0 }
    }
}

/// Flat tree. A leaf has `feature == None` and stores the fraction of
/// abnormal training rows that reached it.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub feature: Vec<Option<usize>>,
    pub threshold: Vec<f64>,
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    pub value: Vec<f64>,
}

impl Tree {
    fn push_leaf(&mut self, value: f64) -> usize {
        self.feature.push(None);
        self.threshold.push(0.0);
        self.left.push(0);
        self.right.push(0);
        self.value.push(value);
        self.feature.len() - 1
    }

    pub fn len(&self) -> usize {
        self.feature.len()
    }

    pub fn is_empty(&self) -> bool {
        self.feature.is_empty()
    }

    /// Abnormal fraction of the leaf `x` falls into (`x[f] <= t` goes left).
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut n = 0;
        while let Some(f) = self.feature[n] {
            n = if x[f] <= self.threshold[n] { self.left[n] } else { self.right[n] };
        }
        self.value[n]
    }
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [u8],
    max_features: usize,
    max_depth: Option<usize>,
    rng: Rng,
    tree: Tree,
}

struct Split {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

impl Builder<'_> {
    /// Best split of `rows` on feature `f`, or `None` if `f` is constant there.
    fn best_on(&self, rows: &[usize], f: usize) -> Option<Split> {
        let mut sorted: Vec<(f64, u8)> = rows.iter().map(|&r| (self.x[r][f], self.y[r])).collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = sorted.len();
        let total_pos = sorted.iter().filter(|s| s.1 == 1).count();
        let mut best: Option<Split> = None;
        let mut left_pos = 0;
        for i in 1..n {
            left_pos += (sorted[i - 1].1 == 1) as usize;
            let (a, b) = (sorted[i - 1].0, sorted[i].0);
            if a == b {
                continue;
            }
            let impurity = (i as f64 * gini(left_pos, i) + (n - i) as f64 * gini(total_pos - left_pos, n - i)) / n as f64;
            if best.as_ref().is_none_or(|s| impurity < s.impurity) {
                let mid = a + (b - a) / 2.0;
                let threshold = if mid < b { mid } else { a };
                best = Some(Split { feature: f, threshold, impurity });
            }
        }
        best
    }

    /// Candidate features are drawn in random order; like the common
    /// reference implementations, the search continues past `max_features`
    /// constant features until that many splittable ones have been seen.
    fn grow(&mut self, rows: &[usize], depth: usize) -> usize {
        let pos = rows.iter().filter(|&&r| self.y[r] == 1).count();
        let value = pos as f64 / rows.len() as f64;
        if pos == 0 || pos == rows.len() || rows.len() < 2 || self.max_depth.is_some_and(|d| depth >= d) {
            return self.tree.push_leaf(value);
        }
        let d = self.x[0].len();
        let order = self.rng.permutation(d);
        let mut best: Option<Split> = None;
        let mut seen = 0;
        for f in order {
            if seen == self.max_features {
                break;
            }
            if let Some(s) = self.best_on(rows, f) {
                seen += 1;
                if best.as_ref().is_none_or(|b| s.impurity < b.impurity) {
                    best = Some(s);
                }
            }
        }
        let Some(split) = best else {
            return self.tree.push_leaf(value);
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x[i][split.feature] <= split.threshold);
        let node = self.tree.push_leaf(value);
        self.tree.feature[node] = Some(split.feature);
        self.tree.threshold[node] = split.threshold;
        let left = self.grow(&l, depth + 1);
        let right = self.grow(&r, depth + 1);
        self.tree.left[node] = left;
        self.tree.right[node] = right;
        node
    }
}

/// Bagged Gini trees. The abnormal probability is the mean over trees of
/// the abnormal fraction in the reached leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    pub trees: Vec<Tree>,
    pub n_features: usize,
}

impl RandomForest {
    pub fn fit(x: &[Vec<f64>], y: &[u8], cfg: &ForestConfig) -> Result<RandomForest> {
        check_training_set(x, y)?;
        if cfg.n_trees == 0 {
            return Err(Error::Config("a forest needs at least one tree".into()));
        }
        let d = x[0].len();
        let max_features = cfg.max_features.unwrap_or(((d as f64).sqrt().floor() as usize).max(1));
        if max_features == 0 || max_features > d {
            return Err(Error::Config(format!("max_features must be in 1..={d}, got {max_features}")));
        }
        let master = Rng::new(cfg.seed);
        let trees = (0..cfg.n_trees)
            .map(|t| {
                let mut rng = master.fork(t as u64);
                let rows: Vec<usize> = if cfg.bootstrap {
                    (0..x.len()).map(|_| rng.below(x.len())).collect()
                } else {
                    (0..x.len()).collect()
                };
                let mut b = Builder {
                    x,
                    y,
                    max_features,
                    max_depth: cfg.max_depth,
                    rng,
                    tree: Tree { feature: vec![], threshold: vec![], left: vec![], right: vec![], value: vec![] },
                };
                b.grow(&rows, 0);
                b.tree
            })
            .collect();
        Ok(RandomForest { trees, n_features: d })
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn threshold_separable_feature() {
        let x = column(&[-3.0, -2.0, -1.5, -0.5, 0.5, 1.0, 2.5, 4.0]);
        let y = [0, 0, 0, 0, 1, 1, 1, 1];
        let f = RandomForest::fit(&x, &y, &ForestConfig::default()).unwrap();
        for (row, &label) in x.iter().zip(&y) {
            assert_eq!((f.predict_proba(row) >= 0.5) as u8, label);
        }
    }

    #[test]
    fn unsplittable_rows_give_the_class_fraction() {
        let x = vec![vec![1.0, 2.0]; 50];
        let y: Vec<u8> = (0..50).map(|i| (i >= 30) as u8).collect();
        let f = RandomForest::fit(&x, &y, &ForestConfig::default()).unwrap();
        assert!(f.trees.iter().all(|t| t.len() == 1));
        let p_normal = 1.0 - f.predict_proba(&x[0]);
        assert!((p_normal - 0.6).abs() < 0.05, "{p_normal}");
        let exact = RandomForest::fit(&x, &y, &ForestConfig { bootstrap: false, ..Default::default() }).unwrap();
        assert!((exact.predict_proba(&x[0]) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(RandomForest::fit(&column(&[1.0, 2.0]), &[1, 1], &ForestConfig::default()).is_err());
    }

    #[test]
    fn seeded() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![(i * 7 % 13) as f64, (i % 5) as f64, i as f64 * 0.1]).collect();
        let y: Vec<u8> = (0..40).map(|i| ((i * 7 % 13) > 6) as u8).collect();
        let cfg = ForestConfig { n_trees: 10, seed: 3, ..Default::default() };
        assert_eq!(RandomForest::fit(&x, &y, &cfg).unwrap(), RandomForest::fit(&x, &y, &cfg).unwrap());
    }

    #[test]
    fn depth_limit() {
        let x = column(&[0.0, 1.0, 2.0, 3.0]);
        let y = [0, 1, 0, 1];
        let cfg = ForestConfig { n_trees: 1, max_depth: Some(1), bootstrap: false, ..Default::default() };
        let f = RandomForest::fit(&x, &y, &cfg).unwrap();
        assert_eq!(f.trees[0].len(), 3);
    }
}
