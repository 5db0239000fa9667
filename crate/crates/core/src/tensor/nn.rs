//! Parameterized layers built from the tensor ops.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{conv2d, relu, spatial_norm, Padding, Scalar, Tensor};
use crate::error::Result;

/// Named trainable tensors, in a stable order.
pub type ParamList<T> = Vec<(String, Tensor<T>)>;

pub trait Module<T: Scalar> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>);

    fn params(&self, prefix: &str) -> ParamList<T> {
        let mut out = Vec::new();
        self.collect_params(prefix, &mut out);
        out
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Normal with std `sqrt(2 / fan_in)`.
    He,
    /// Normal with the given std.
    Normal(f64),
    Zero,
}

pub const NORM_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct Conv2d<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, init: Init, rng: &mut impl Rng) -> Self {
        let n = out_channels * in_channels * kernel * kernel;
        let std = match init {
            Init::He => (2.0 / (in_channels * kernel * kernel) as f64).sqrt(),
            Init::Normal(s) => s,
            Init::Zero => 0.0,
        };
        let w: Vec<T> = if std == 0.0 {
            vec![T::zero(); n]
        } else {
            let dist = Normal::new(0.0, std).expect("valid std");
            (0..n).map(|_| T::of(dist.sample(rng))).collect()
        };
        Conv2d {
            weight: Tensor::param(&[out_channels, in_channels, kernel, kernel], w).expect("shape"),
            bias: Tensor::param(&[out_channels], vec![T::zero(); out_channels]).expect("shape"),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(x, &self.weight, &self.bias, Padding::Same)
    }

    pub fn zero_(&self) {
        self.weight.data_mut().fill(T::zero());
        self.bias.data_mut().fill(T::zero());
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        out.push((join(prefix, "weight"), self.weight.clone()));
        out.push((join(prefix, "bias"), self.bias.clone()));
    }
}

/// Affine per-channel spatial normalization.
#[derive(Debug, Clone)]
pub struct SpatialNorm<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

impl<T: Scalar> SpatialNorm<T> {
    pub fn new(channels: usize) -> Self {
        SpatialNorm {
            gamma: Tensor::param(&[channels], vec![T::one(); channels]).expect("shape"),
            beta: Tensor::param(&[channels], vec![T::zero(); channels]).expect("shape"),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        spatial_norm(x, &self.gamma, &self.beta, NORM_EPSILON)
    }
}

impl<T: Scalar> Module<T> for SpatialNorm<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        out.push((join(prefix, "gamma"), self.gamma.clone()));
        out.push((join(prefix, "beta"), self.beta.clone()));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub norm: bool,
    pub relu: bool,
}

#[derive(Debug, Clone)]
pub struct Layer<T: Scalar> {
    pub conv: Conv2d<T>,
    pub norm: Option<SpatialNorm<T>>,
    pub relu: bool,
}

/// Sequential stack of `conv → [norm] → [relu]` layers with same padding.
#[derive(Debug, Clone)]
pub struct ConvStack<T: Scalar> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> ConvStack<T> {
    /// Hidden layers use He init; `last_init` applies to the final conv.
    pub fn new(in_channels: usize, specs: &[LayerSpec], last_init: Init, rng: &mut impl Rng) -> Self {
        let mut c = in_channels;
        let mut layers = Vec::with_capacity(specs.len());
        for (i, s) in specs.iter().enumerate() {
            let init = if i + 1 == specs.len() { last_init } else { Init::He };
            layers.push(Layer {
                conv: Conv2d::new(c, s.out_channels, s.kernel, init, rng),
                norm: s.norm.then(|| SpatialNorm::new(s.out_channels)),
                relu: s.relu,
            });
            c = s.out_channels;
        }
        ConvStack { layers }
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].conv.in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map(|l| l.conv.out_channels()).unwrap_or(0)
    }

    pub fn last(&self) -> &Conv2d<T> {
        &self.layers.last().expect("non-empty stack").conv
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for l in &self.layers {
            h = l.conv.forward(&h)?;
            if let Some(n) = &l.norm {
                h = n.forward(&h)?;
            }
            if l.relu {
                h = relu(&h);
            }
        }
        Ok(h)
    }
}

impl<T: Scalar> Module<T> for ConvStack<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.conv.collect_params(&join(prefix, &format!("conv{i}")), out);
            if let Some(n) = &l.norm {
                n.collect_params(&join(prefix, &format!("norm{i}")), out);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stack_shapes_and_names() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let specs = [
            LayerSpec { out_channels: 4, kernel: 3, norm: true, relu: true },
            LayerSpec { out_channels: 2, kernel: 1, norm: false, relu: false },
        ];
        let s = ConvStack::<f32>::new(3, &specs, Init::Zero, &mut rng);
        let y = s.forward(&Tensor::full(&[3, 5, 5], 0.5)).unwrap();
        assert_eq!(y.shape(), &[2, 5, 5]);
        assert!(y.data().iter().all(|v| *v == 0.0));
        let names: Vec<String> = s.params("net").into_iter().map(|(n, _)| n).collect();
        assert_eq!(
            names,
            ["net.conv0.weight", "net.conv0.bias", "net.norm0.gamma", "net.norm0.beta", "net.conv1.weight", "net.conv1.bias"]
        );
    }
}
