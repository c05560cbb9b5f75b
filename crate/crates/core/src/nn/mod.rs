//! Differentiable neural-network operators and their parameter bundles.

mod activation;
mod conv;
mod norm;
mod pool;

use serde::{Deserialize, Serialize};

pub use activation::{dense, relu, sigmoid, softmax, softmax_cross_entropy};
pub use conv::{conv2d, cosine_conv2d, depthwise_conv2d, depthwise_separable_conv2d, COSINE_EPS};
pub use norm::{batch_norm, BatchStats, BN_EPS, BN_MOMENTUM};
pub use pool::{global_avg_pool, maxpool2x2, upsample2x};

use crate::rng::Rng;
use crate::tensor::{numel, Real, Tensor};

/// Whether batch normalisation uses batch statistics (and reports them) or
/// the running estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

fn kaiming_uniform<T: Real>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let data = (0..numel(shape))
        .map(|_| T::of(rng.uniform_range(-bound, bound)))
        .collect();
    Tensor::new(shape, data).expect("shape and data agree")
}

/// Standard convolution filters and bias.
#[derive(Debug, Clone)]
pub struct ConvParams<T> {
    /// `[out, in, k, k]`
    pub weight: Tensor<T>,
    /// `[out]`; absent for the cosine-normalized convolution.
    pub bias: Option<Tensor<T>>,
}

impl<T: Real> ConvParams<T> {
    /// Kaiming-uniform (fan-in) filters, zero bias.
    pub fn standard(in_ch: usize, out_ch: usize, k: usize, rng: &mut Rng) -> Self {
        ConvParams {
            weight: kaiming_uniform(&[out_ch, in_ch, k, k], in_ch * k * k, rng),
            bias: Some(Tensor::zeros(&[out_ch])),
        }
    }

    /// Unit-norm random filter directions and no bias; filter magnitude has
    /// no effect under cosine normalisation.
    pub fn cosine(in_ch: usize, out_ch: usize, k: usize, rng: &mut Rng) -> Self {
        let patch = in_ch * k * k;
        let mut data = Vec::with_capacity(out_ch * patch);
        for _ in 0..out_ch {
            let dir: Vec<f64> = (0..patch).map(|_| rng.normal()).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            data.extend(dir.iter().map(|v| T::of(v / norm)));
        }
        ConvParams {
            weight: Tensor::new(&[out_ch, in_ch, k, k], data).expect("shape and data agree"),
            bias: None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Tensor::len)
    }
}

/// Depthwise-separable convolution: per-channel 3x3 filters followed by a
/// 1x1 channel mix.
#[derive(Debug, Clone)]
pub struct DscParams<T> {
    /// `[in, 1, 3, 3]`
    pub depthwise: Tensor<T>,
    /// `[out, in, 1, 1]`
    pub pointwise: Tensor<T>,
    /// `[out]`
    pub bias: Tensor<T>,
}

impl<T: Real> DscParams<T> {
    pub fn new(in_ch: usize, out_ch: usize, rng: &mut Rng) -> Self {
        DscParams {
            depthwise: kaiming_uniform(&[in_ch, 1, 3, 3], 9, rng),
            pointwise: kaiming_uniform(&[out_ch, in_ch, 1, 1], in_ch, rng),
            bias: Tensor::zeros(&[out_ch]),
        }
    }

    pub fn param_count(&self) -> usize {
        self.depthwise.len() + self.pointwise.len() + self.bias.len()
    }
}

/// Affine parameters (trainable) and running statistics (not trainable).
#[derive(Debug, Clone)]
pub struct BatchNormParams<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

impl<T: Real> BatchNormParams<T> {
    pub fn new(ch: usize) -> Self {
        BatchNormParams {
            gamma: Tensor::ones(&[ch]),
            beta: Tensor::zeros(&[ch]),
            running_mean: Tensor::zeros(&[ch]),
            running_var: Tensor::ones(&[ch]),
        }
    }

    pub fn param_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }
}

/// Fully connected layer, `weight: [in, out]`.
#[derive(Debug, Clone)]
pub struct DenseParams<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> DenseParams<T> {
    pub fn new(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        DenseParams {
            weight: kaiming_uniform(&[inputs, outputs], inputs, rng),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Trainable scalars of a standard `k x k` convolution with bias.
pub fn conv_param_count(in_ch: usize, out_ch: usize, k: usize) -> usize {
    in_ch * out_ch * k * k + out_ch
}

/// Trainable scalars of a depthwise-separable convolution with a 3x3
/// depthwise stage.
pub fn dsc_param_count(in_ch: usize, out_ch: usize) -> usize {
    in_ch * 9 + in_ch * out_ch + out_ch
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_layer_counts() {
        let mut rng = Rng::new(0);
        assert_eq!(ConvParams::<f32>::standard(3, 32, 3, &mut rng).param_count(), 896);
        assert_eq!(conv_param_count(3, 32, 3), 896);
        assert_eq!(DscParams::<f32>::new(3, 32, &mut rng).param_count(), 155);
        assert_eq!(dsc_param_count(3, 32), 155);
        assert_eq!(ConvParams::<f32>::cosine(3, 32, 3, &mut rng).param_count(), 864);
    }

    #[test]
    fn cosine_filters_are_unit_norm() {
        let mut rng = Rng::new(1);
        let p = ConvParams::<f64>::cosine(4, 5, 3, &mut rng);
        for f in p.weight.data().chunks(36) {
            let n: f64 = f.iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dsc_is_cheaper_for_wide_outputs() {
        for &(i, o) in &[(3, 32), (32, 64), (64, 128), (128, 128), (3, 8), (8, 16)] {
            assert!(dsc_param_count(i, o) < conv_param_count(i, o, 3), "{i}->{o}");
        }
    }
}
