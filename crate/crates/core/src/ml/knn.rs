use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::check_training_set;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnConfig {
    pub k: usize,
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig { k: 5 }
    }
}

/// Brute-force Euclidean k-nearest neighbours; the abnormal probability is
/// the abnormal share of the `k` votes.
#[derive(Debug, Clone, PartialEq)]
pub struct Knn {
    pub k: usize,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<u8>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

impl Knn {
    pub fn fit(x: &[Vec<f64>], y: &[u8], cfg: &KnnConfig) -> Result<Knn> {
        check_training_set(x, y)?;
        if cfg.k == 0 || cfg.k > x.len() {
            return Err(Error::InvalidArgument(format!("k = {} with {} training rows", cfg.k, x.len())));
        }
        Ok(Knn { k: cfg.k, x: x.to_vec(), y: y.to_vec() })
    }

    /// Training indices of the `k` nearest rows, nearest first; equal
    /// distances go to the lower index.
    pub fn neighbours(&self, q: &[f64]) -> Vec<usize> {
        let mut d: Vec<(f64, usize)> = self.x.iter().enumerate().map(|(i, r)| (sq_dist(r, q), i)).collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.into_iter().take(self.k).map(|(_, i)| i).collect()
    }

    pub fn predict_proba(&self, q: &[f64]) -> f64 {
        let votes = self.neighbours(q).iter().filter(|&&i| self.y[i] == 1).count();
        votes as f64 / self.k as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_match_with_one_neighbour() {
        let x = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![5.0, 5.0]];
        let y = [0, 1, 0];
        let m = Knn::fit(&x, &y, &KnnConfig { k: 1 }).unwrap();
        for (r, &l) in x.iter().zip(&y) {
            assert_eq!(m.predict_proba(r), l as f64);
        }
    }

    #[test]
    fn five_identical_neighbours() {
        let mut x = vec![vec![2.0, 2.0]; 5];
        x.extend([vec![9.0, 9.0], vec![-9.0, 9.0]]);
        let y = [1, 1, 1, 1, 1, 0, 0];
        let m = Knn::fit(&x, &y, &KnnConfig::default()).unwrap();
        assert_eq!(m.predict_proba(&[2.0, 2.1]), 1.0);
    }

    #[test]
    fn ties_prefer_lower_index() {
        let x = vec![vec![1.0], vec![-1.0], vec![1.0]];
        let m = Knn::fit(&x, &[0, 1, 1], &KnnConfig { k: 1 }).unwrap();
        assert_eq!(m.neighbours(&[0.0]), vec![0]);
        assert_eq!(m.predict_proba(&[0.0]), 0.0);
    }

    #[test]
    fn k_larger_than_training_set() {
        assert!(Knn::fit(&[vec![0.0], vec![1.0]], &[0, 1], &KnnConfig { k: 3 }).is_err());
    }
}
