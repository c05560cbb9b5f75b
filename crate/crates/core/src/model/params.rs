use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::nn::{BatchNormParams, BatchStats, ConvParams, DenseParams, DscParams};
use crate::tensor::{Real, Tensor};

/// Named model state. Trainable tensors and batch-norm running statistics
/// are kept apart so the optimiser only ever sees the former. Insertion
/// order is the construction order and is what checkpoints serialise.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T> {
    params: IndexMap<String, Tensor<T>>,
    buffers: IndexMap<String, Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: IndexMap::new(), buffers: IndexMap::new() }
    }

    pub fn insert_param(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.params.insert(name.into(), value);
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.buffers.insert(name.into(), value);
    }

    pub fn add_conv(&mut self, prefix: &str, p: ConvParams<T>) {
        self.insert_param(format!("{prefix}.weight"), p.weight);
        if let Some(b) = p.bias {
            self.insert_param(format!("{prefix}.bias"), b);
        }
    }

    pub fn add_dsc(&mut self, prefix: &str, p: DscParams<T>) {
        self.insert_param(format!("{prefix}.depthwise"), p.depthwise);
        self.insert_param(format!("{prefix}.pointwise"), p.pointwise);
        self.insert_param(format!("{prefix}.bias"), p.bias);
    }

    pub fn add_bn(&mut self, prefix: &str, p: BatchNormParams<T>) {
        self.insert_param(format!("{prefix}.gamma"), p.gamma);
        self.insert_param(format!("{prefix}.beta"), p.beta);
        self.insert_buffer(format!("{prefix}.running_mean"), p.running_mean);
        self.insert_buffer(format!("{prefix}.running_var"), p.running_var);
    }

    pub fn add_dense(&mut self, prefix: &str, p: DenseParams<T>) {
        self.insert_param(format!("{prefix}.weight"), p.weight);
        self.insert_param(format!("{prefix}.bias"), p.bias);
    }

    pub fn param(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
    }

    pub fn param_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor<T>> {
        self.buffers
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing buffer {name}")))
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Folds training-mode batch statistics into the running estimates of
    /// the batch-norm layer at `prefix`.
    pub fn update_bn(&mut self, prefix: &str, stats: &BatchStats<T>) -> Result<()> {
        let mean_key = format!("{prefix}.running_mean");
        let var_key = format!("{prefix}.running_var");
        let mut mean = self.buffer(&mean_key)?.clone();
        let mut var = self.buffer(&var_key)?.clone();
        stats.update_running(&mut mean, &mut var);
        self.buffers.insert(mean_key, mean);
        self.buffers.insert(var_key, var);
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            buffers: self.buffers.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// All tensors (parameters then buffers) in a stable order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params().chain(self.buffers())
    }

    /// Replaces every tensor with one of the same name and shape from
    /// `other`; fails without modifying `self` if any is missing or
    /// misshapen.
    pub fn load_from(&mut self, mut other: IndexMap<String, Tensor<T>>) -> Result<()> {
        for (name, t) in self.params.iter().chain(self.buffers.iter()) {
            match other.get(name) {
                Some(o) if o.shape() == t.shape() => {}
                Some(o) => {
                    return Err(Error::Checkpoint(format!(
                        "{name}: stored shape {:?}, model expects {:?}",
                        o.shape(),
                        t.shape()
                    )))
                }
                None => return Err(Error::Checkpoint(format!("missing tensor {name}"))),
            }
        }
        let expected = self.params.len() + self.buffers.len();
        if other.len() != expected {
            let extra: Vec<_> = other
                .keys()
                .filter(|k| !self.params.contains_key(*k) && !self.buffers.contains_key(*k))
                .cloned()
                .collect();
            return Err(Error::Checkpoint(format!("unexpected tensors {extra:?}")));
        }
        for (name, t) in self.params.iter_mut().chain(self.buffers.iter_mut()) {
            *t = other.swap_remove(name).expect("checked above");
        }
        Ok(())
    }
}
