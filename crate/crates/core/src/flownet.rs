//! Coarse-to-fine pyramid flow estimation.
//!
//! Each pyramid level owns an independent five-layer convolutional
//! sub-network. Starting from a zero field at the coarsest level, every
//! sub-network refines the upsampled estimate of the previous level by
//! predicting a residual from the reference frame, the (optionally
//! pre-warped) other frame and the current flow.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::nn::{join, ConvStack, Init, LayerSpec, Module, ParamList};
use crate::tensor::{add, add_scalar, blur_downsample, concat, crop, pad_replicate, resize_bilinear_to, scale, Scalar, Tensor};
use crate::warp::{warp_tensor, FlowField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowPyramidConfig {
    pub levels: usize,
    /// Output channels of the five convolutions; the last must be 2.
    pub channels: Vec<usize>,
    pub kernel: usize,
    /// Warp the non-reference frame by the upsampled flow before each level.
    pub prewarp: bool,
    pub frame_channels: usize,
    /// Spatial normalization after each hidden convolution.
    pub normalize: bool,
}

impl Default for FlowPyramidConfig {
    fn default() -> Self {
        FlowPyramidConfig {
            levels: 4,
            channels: vec![32, 64, 32, 16, 2],
            kernel: 7,
            prewarp: true,
            frame_channels: 3,
            normalize: false,
        }
    }
}

impl FlowPyramidConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 {
            return Err(Error::Config("flow pyramid needs at least one level".into()));
        }
        if self.channels.last() != Some(&2) {
            return Err(Error::Config(format!(
                "flow sub-network must end in 2 channels, got {:?}",
                self.channels
            )));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!("flow kernel must be odd, got {}", self.kernel)));
        }
        Ok(())
    }

    /// `[reference, other, flow]` channel count.
    pub fn input_channels(&self) -> usize {
        2 * self.frame_channels + 2
    }

    /// Spatial extents are padded to a multiple of this.
    pub fn granularity(&self) -> usize {
        1 << (self.levels - 1)
    }

    pub(crate) fn layer_specs(&self) -> Vec<LayerSpec> {
        let n = self.channels.len();
        self.channels
            .iter()
            .enumerate()
            .map(|(i, &c)| LayerSpec {
                out_channels: c,
                kernel: self.kernel,
                norm: self.normalize && i + 1 < n,
                relu: i + 1 < n,
            })
            .collect()
    }
}

/// Multi-resolution stack, coarsest level first.
#[derive(Debug, Clone)]
pub struct GaussianPyramid<T: Scalar> {
    pub levels: Vec<Tensor<T>>,
    /// Extents of the frame before replicate padding.
    pub original: (usize, usize),
}

/// Replicate-pads bottom/right so both extents are multiples of `multiple`.
pub fn pad_to_multiple<T: Scalar>(x: &Tensor<T>, multiple: usize) -> Result<Tensor<T>> {
    let (_, h, w) = x.chw()?;
    let ph = h.next_multiple_of(multiple) - h;
    let pw = w.next_multiple_of(multiple) - w;
    pad_replicate(x, (0, ph, 0, pw))
}

/// Builds a pyramid by repeated binomial blur and 2× subsampling. The
/// frame is first replicate-padded to a multiple of `2^(levels − 1)`.
pub fn gaussian_pyramid<T: Scalar>(frame: &Tensor<T>, levels: usize) -> Result<GaussianPyramid<T>> {
    if levels < 1 {
        return Err(Error::Config("pyramid needs at least one level".into()));
    }
    let (_, h, w) = frame.chw()?;
    let mut cur = pad_to_multiple(frame, 1 << (levels - 1))?;
    let mut out = vec![cur.clone()];
    for _ in 1..levels {
        cur = blur_downsample(&cur)?;
        out.push(cur.clone());
    }
    out.reverse();
    Ok(GaussianPyramid {
        levels: out,
        original: (h, w),
    })
}

/// 2× bilinear upsampling of a flow with displacements doubled.
pub fn upsample_flow<T: Scalar>(flow: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, h, w) = flow.chw()?;
    Ok(scale(&resize_bilinear_to(flow, 2 * h, 2 * w)?, 2.0))
}

/// Frames enter the convolutions as `(x + FRAME_OFFSET) · FRAME_SCALE`.
pub const FRAME_OFFSET: f64 = -0.5;
pub const FRAME_SCALE: f64 = 4.0;
/// The convolution output is multiplied by this before it is added to the
/// upsampled flow.
pub const RESIDUAL_SCALE: f64 = 4.0;

/// One pyramid level's sub-network.
#[derive(Debug, Clone)]
pub struct FlowSubnet<T: Scalar> {
    pub stack: ConvStack<T>,
}

impl<T: Scalar> FlowSubnet<T> {
    pub fn new(config: &FlowPyramidConfig, last_init: Init, rng: &mut impl Rng) -> Self {
        FlowSubnet {
            stack: ConvStack::new(config.input_channels(), &config.layer_specs(), last_init, rng),
        }
    }

    /// `up_flow + residual([reference, other′, up_flow])`, where `other′` is
    /// `other` warped by `up_flow` when `prewarp` is set.
    pub fn forward(
        &self,
        reference: &Tensor<T>,
        other: &Tensor<T>,
        up_flow: &Tensor<T>,
        prewarp: bool,
    ) -> Result<Tensor<T>> {
        if reference.shape()[1..] != other.shape()[1..] || reference.shape()[1..] != up_flow.shape()[1..] {
            return Err(Error::Shape(format!(
                "flow level inputs disagree: {:?}, {:?}, {:?}",
                reference.shape(),
                other.shape(),
                up_flow.shape()
            )));
        }
        let other = if prewarp { warp_tensor(other, up_flow)? } else { other.clone() };
        let x = concat(&[
            &scale(&add_scalar(reference, FRAME_OFFSET), FRAME_SCALE),
            &scale(&add_scalar(&other, FRAME_OFFSET), FRAME_SCALE),
            up_flow,
        ])?;
        add(up_flow, &scale(&self.stack.forward(&x)?, RESIDUAL_SCALE))
    }
}

impl<T: Scalar> Module<T> for FlowSubnet<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        self.stack.collect_params(prefix, out);
    }
}

/// Pyramid flow estimator with one sub-network per level.
#[derive(Debug, Clone)]
pub struct FlowNet<T: Scalar> {
    pub config: FlowPyramidConfig,
    /// Coarsest first.
    pub levels: Vec<FlowSubnet<T>>,
}

impl<T: Scalar> FlowNet<T> {
    /// Final layers start at zero, so a fresh network predicts zero flow.
    pub fn new(config: FlowPyramidConfig, rng: &mut impl Rng) -> Result<Self> {
        Self::with_last_init(config, Init::Zero, rng)
    }

    pub fn with_last_init(config: FlowPyramidConfig, last_init: Init, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let levels = (0..config.levels).map(|_| FlowSubnet::new(&config, last_init, rng)).collect();
        Ok(FlowNet { config, levels })
    }

    /// Flow from `reference` to `other` such that warping `other` by it
    /// approximates `reference`.
    pub fn estimate(&self, reference: &Tensor<T>, other: &Tensor<T>) -> Result<FlowField<T>> {
        let (_, h, w) = reference.chw()?;
        let levels = self.estimate_levels(reference, other)?;
        let finest = levels.last().expect("at least one level");
        FlowField::new(crop(finest, 0, 0, h, w)?)
    }

    /// Per-level flows at padded resolution, coarsest first.
    pub fn estimate_levels(&self, reference: &Tensor<T>, other: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        if reference.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "flow frames differ: {:?} vs {:?}",
                reference.shape(),
                other.shape()
            )));
        }
        let (c, _, _) = reference.chw()?;
        if c != self.config.frame_channels {
            return Err(Error::Shape(format!(
                "flow network expects {} frame channels, got {c}",
                self.config.frame_channels
            )));
        }
        let pr = gaussian_pyramid(reference, self.config.levels)?;
        let po = gaussian_pyramid(other, self.config.levels)?;
        let mut out: Vec<Tensor<T>> = Vec::with_capacity(self.levels.len());
        for (k, sub) in self.levels.iter().enumerate() {
            let (_, lh, lw) = pr.levels[k].chw()?;
            let up = match out.last() {
                None => Tensor::zeros(&[2, lh, lw]),
                Some(prev) => upsample_flow(prev)?,
            };
            out.push(sub.forward(&pr.levels[k], &po.levels[k], &up, self.config.prewarp)?);
        }
        Ok(out)
    }

    pub fn zero_final_layers(&self) {
        for l in &self.levels {
            l.stack.last().zero_();
        }
    }
}

impl<T: Scalar> Module<T> for FlowNet<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        for (k, l) in self.levels.iter().enumerate() {
            l.collect_params(&join(prefix, &format!("level{k}")), out);
        }
    }
}

/// `(v21, v23)` for frame interpolation: two independent networks, both fed
/// `(frame1, frame3)` in that order.
pub fn estimate_interp_flows<T: Scalar>(
    frame1: &Tensor<T>,
    frame3: &Tensor<T>,
    net21: &FlowNet<T>,
    net23: &FlowNet<T>,
) -> Result<(FlowField<T>, FlowField<T>)> {
    Ok((net21.estimate(frame1, frame3)?, net23.estimate(frame1, frame3)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_leaves, CheckConfig};
    use crate::tensor::{mul, sum};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_img(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_vec(&[c, h, w], (0..c * h * w).map(|_| rng.random()).collect()).unwrap()
    }

    fn small_config(levels: usize) -> FlowPyramidConfig {
        FlowPyramidConfig {
            levels,
            channels: vec![4, 3, 2],
            kernel: 3,
            ..Default::default()
        }
    }

    #[test]
    fn pyramid_extents_halve() {
        let img = Tensor::<f32>::full(&[3, 16, 16], 0.25);
        let p = gaussian_pyramid(&img, 3).unwrap();
        let sizes: Vec<usize> = p.levels.iter().map(|l| l.shape()[1]).collect();
        assert_eq!(sizes, vec![4, 8, 16]);
        for l in &p.levels {
            assert!(l.data().iter().all(|v| *v == 0.25));
        }
        assert!(gaussian_pyramid(&img, 0).is_err());
    }

    #[test]
    fn pyramid_pads_odd_extents() {
        let img = Tensor::<f32>::full(&[1, 13, 10], 1.0);
        let p = gaussian_pyramid(&img, 4).unwrap();
        assert_eq!(p.levels[3].shape(), &[1, 16, 16]);
        assert_eq!(p.levels[0].shape(), &[1, 2, 2]);
        assert_eq!(p.original, (13, 10));
    }

    #[test]
    fn impulse_level_one_is_binomial_outer_product() {
        let mut d = vec![0.0f64; 256];
        d[8 * 16 + 8] = 1.0;
        let img = Tensor::from_vec(&[1, 16, 16], d).unwrap();
        let p = gaussian_pyramid(&img, 2).unwrap();
        let l1 = p.levels[0].data();
        // level-1 sample i sits at fine position 2i; offset from the impulse is 2i − 8
        let k = [1.0, 4.0, 6.0, 4.0, 1.0];
        let tap = |i: usize| -> f64 {
            let off = 8isize - 2 * i as isize + 2;
            if (0..5).contains(&off) { k[off as usize] / 16.0 } else { 0.0 }
        };
        for y in 0..8 {
            for x in 0..8 {
                assert!((l1[y * 8 + x] - tap(y) * tap(x)).abs() < 1e-15, "({y},{x})");
            }
        }
    }

    #[test]
    fn zero_final_layer_is_identity_on_up_flow() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = small_config(1);
        let sub = FlowSubnet::<f64>::new(&cfg, Init::Zero, &mut rng);
        let up = Tensor::from_vec(&[2, 4, 4], (0..32).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let a = rand_img(&mut rng, 3, 4, 4);
        let b = rand_img(&mut rng, 3, 4, 4);
        let out = sub.forward(&a, &b, &up, true).unwrap();
        assert_eq!(out.to_vec(), up.to_vec());
    }

    #[test]
    fn rgb_input_has_eight_channels() {
        let cfg = FlowPyramidConfig::default();
        assert_eq!(cfg.input_channels(), 8);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = FlowNet::<f32>::new(cfg, &mut rng).unwrap();
        assert_eq!(net.levels.len(), 4);
        assert_eq!(net.levels[0].stack.in_channels(), 8);
        let chans: Vec<usize> = net.levels[0].stack.layers.iter().map(|l| l.conv.out_channels()).collect();
        assert_eq!(chans, vec![32, 64, 32, 16, 2]);
        assert!(net.levels[0].stack.layers.iter().all(|l| l.conv.kernel() == 7));
        assert!(net.levels[0].stack.layers[4].norm.is_none() && !net.levels[0].stack.layers[4].relu);
        assert!(net.levels[0].stack.layers[..4].iter().all(|l| l.relu && l.norm.is_none()));
        let normed = FlowNet::<f32>::new(FlowPyramidConfig { normalize: true, ..Default::default() }, &mut rng).unwrap();
        assert!(normed.levels[0].stack.layers[..4].iter().all(|l| l.norm.is_some()));
        assert!(normed.levels[0].stack.layers[4].norm.is_none());
    }

    #[test]
    fn untrained_network_predicts_zero_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = FlowNet::<f64>::new(small_config(3), &mut rng).unwrap();
        let a = rand_img(&mut rng, 3, 12, 10);
        let b = rand_img(&mut rng, 3, 12, 10);
        for lvl in net.estimate_levels(&a, &b).unwrap() {
            assert!(lvl.data().iter().all(|v| *v == 0.0));
        }
        let f = net.estimate(&a, &b).unwrap();
        assert_eq!(f.tensor().shape(), &[2, 12, 10]);
    }

    #[test]
    fn full_resolution_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = FlowNet::<f32>::new(small_config(4), &mut rng).unwrap();
        let a = Tensor::<f32>::full(&[3, 256, 448], 0.5);
        let f = net.estimate(&a, &a).unwrap();
        assert_eq!(f.tensor().shape(), &[2, 256, 448]);
    }

    #[test]
    fn interp_flows_zero_when_untrained() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n21 = FlowNet::<f32>::new(small_config(2), &mut rng).unwrap();
        let n23 = FlowNet::<f32>::new(small_config(2), &mut rng).unwrap();
        let a = Tensor::full(&[3, 8, 8], 0.2f32);
        let b = Tensor::full(&[3, 8, 8], 0.7f32);
        let (v21, v23) = estimate_interp_flows(&a, &b, &n21, &n23).unwrap();
        assert_eq!(v21.tensor().shape(), &[2, 8, 8]);
        assert!(v21.tensor().data().iter().chain(v23.tensor().data().iter()).all(|v| *v == 0.0));
    }

    #[test]
    fn gradient_reaches_frames_and_flow_on_two_level_toy() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = FlowNet::<f64>::with_last_init(small_config(2), Init::Normal(0.3), &mut rng).unwrap();
        let a = Tensor::param(&[3, 8, 8], rand_img(&mut rng, 3, 8, 8).to_vec()).unwrap();
        let b = Tensor::param(&[3, 8, 8], rand_img(&mut rng, 3, 8, 8).to_vec()).unwrap();
        let wts = rand_img(&mut rng, 2, 8, 8);
        let mut vars = vec![a.clone(), b.clone()];
        vars.extend(net.params("").into_iter().map(|(_, t)| t));
        let loss = || Ok(sum(&mul(net.estimate(&a, &b)?.tensor(), &wts)?));
        let report = check_leaves(&vars, loss, &CheckConfig { samples: 60, ..Default::default() }).unwrap();
        assert!(report.passed(), "{report:?}");
        assert!(a.grad().unwrap().iter().any(|v| *v != 0.0));
        assert!(b.grad().unwrap().iter().any(|v| *v != 0.0));
    }

    #[test]
    fn subnet_gradient_reaches_up_flow() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sub = FlowSubnet::<f64>::new(&small_config(1), Init::Normal(0.3), &mut rng);
        let a = rand_img(&mut rng, 3, 6, 6);
        let b = rand_img(&mut rng, 3, 6, 6);
        let up = Tensor::param(&[2, 6, 6], (0..72).map(|_| rng.random_range(-0.8..0.8)).collect()).unwrap();
        let wts = rand_img(&mut rng, 2, 6, 6);
        let report = check_leaves(
            &[up.clone()],
            || Ok(sum(&mul(&sub.forward(&a, &b, &up, true)?, &wts)?)),
            &CheckConfig { samples: 40, ..Default::default() },
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn extent_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = FlowNet::<f32>::new(small_config(2), &mut rng).unwrap();
        let a = Tensor::full(&[3, 8, 8], 0.0f32);
        let b = Tensor::full(&[3, 8, 6], 0.0f32);
        assert!(matches!(net.estimate(&a, &b), Err(Error::Shape(_))));
    }
}
