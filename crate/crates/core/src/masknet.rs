//! Occlusion masks for the two warped frames of frame interpolation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flownet::pad_to_multiple;
use crate::tensor::nn::{join, ConvStack, Init, LayerSpec, Module, ParamList};
use crate::tensor::{blur_downsample, concat, crop, mul_mask, narrow, resize_bilinear_to, scale, sigmoid, Scalar, Tensor};
use crate::warp::{warp_tensor, FlowField};

/// Per-pixel validity weight in `[0, 1]`, shape `1 × H × W`.
#[derive(Debug, Clone)]
pub struct OcclusionMask<T: Scalar = f32>(Tensor<T>);

impl<T: Scalar> OcclusionMask<T> {
    pub fn new(t: Tensor<T>) -> Result<Self> {
        let (c, _, _) = t.chw()?;
        if c != 1 {
            return Err(Error::Shape(format!("mask must have 1 channel, got {c}")));
        }
        if let Some(v) = t.data().iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
            return Err(Error::Data(format!("mask value {v} outside [0, 1]")));
        }
        Ok(OcclusionMask(t))
    }

    pub fn ones(h: usize, w: usize) -> Self {
        OcclusionMask(Tensor::full(&[1, h, w], T::one()))
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }

    pub fn mean(&self) -> f64 {
        let d = self.0.data();
        d.iter().map(|v| v.f64()).sum::<f64>() / d.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskPyramidConfig {
    pub levels: usize,
    pub channels: Vec<usize>,
    pub kernel: usize,
}

impl Default for MaskPyramidConfig {
    fn default() -> Self {
        MaskPyramidConfig {
            levels: 4,
            channels: vec![32, 64, 32, 16, 2],
            kernel: 7,
        }
    }
}

impl MaskPyramidConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 {
            return Err(Error::Config("mask pyramid needs at least one level".into()));
        }
        if self.channels.last() != Some(&2) {
            return Err(Error::Config(format!(
                "mask network must end in 2 channels, got {:?}",
                self.channels
            )));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!("mask kernel must be odd, got {}", self.kernel)));
        }
        Ok(())
    }

    /// Two flows at the coarsest level; two flows plus two upsampled masks above it.
    pub fn input_channels(&self, level: usize) -> usize {
        if level == 0 { 4 } else { 6 }
    }

    fn layer_specs(&self) -> Vec<LayerSpec> {
        let n = self.channels.len();
        self.channels
            .iter()
            .enumerate()
            .map(|(i, &c)| LayerSpec {
                out_channels: c,
                kernel: self.kernel,
                norm: i + 1 < n,
                relu: i + 1 < n,
            })
            .collect()
    }
}

/// Flow pyramid, coarsest first: blur-and-subsample with values halved per level.
pub fn flow_pyramid<T: Scalar>(flow: &Tensor<T>, levels: usize) -> Result<Vec<Tensor<T>>> {
    let mut cur = pad_to_multiple(flow, 1 << (levels - 1))?;
    let mut out = vec![cur.clone()];
    for _ in 1..levels {
        cur = scale(&blur_downsample(&cur)?, 0.5);
        out.push(cur.clone());
    }
    out.reverse();
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct MaskNet<T: Scalar> {
    pub config: MaskPyramidConfig,
    /// Coarsest first.
    pub levels: Vec<ConvStack<T>>,
}

impl<T: Scalar> MaskNet<T> {
    pub fn new(config: MaskPyramidConfig, rng: &mut impl Rng) -> Result<Self> {
        Self::with_last_init(config, Init::Zero, rng)
    }

    /// With a zero final layer every mask starts at 0.5.
    pub fn with_last_init(config: MaskPyramidConfig, last_init: Init, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let specs = config.layer_specs();
        let levels = (0..config.levels)
            .map(|k| ConvStack::new(config.input_channels(k), &specs, last_init, rng))
            .collect();
        Ok(MaskNet { config, levels })
    }

    /// `(m21, m23)` from the two flows.
    pub fn estimate(&self, v21: &FlowField<T>, v23: &FlowField<T>) -> Result<(OcclusionMask<T>, OcclusionMask<T>)> {
        let (a, b) = (v21.tensor(), v23.tensor());
        if a.shape() != b.shape() {
            return Err(Error::Shape(format!(
                "mask flows differ: {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let (_, h, w) = a.chw()?;
        let p21 = flow_pyramid(a, self.config.levels)?;
        let p23 = flow_pyramid(b, self.config.levels)?;
        let mut masks: Option<Tensor<T>> = None;
        for (k, net) in self.levels.iter().enumerate() {
            let x = match &masks {
                None => concat(&[&p21[k], &p23[k]])?,
                Some(m) => {
                    let (_, lh, lw) = p21[k].chw()?;
                    let up = resize_bilinear_to(m, lh, lw)?;
                    concat(&[&p21[k], &p23[k], &up])?
                }
            };
            masks = Some(sigmoid(&net.forward(&x)?));
        }
        let m = crop(&masks.expect("at least one level"), 0, 0, h, w)?;
        Ok((
            OcclusionMask(narrow(&m, 0, 1)?),
            OcclusionMask(narrow(&m, 1, 1)?),
        ))
    }
}

impl<T: Scalar> Module<T> for MaskNet<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        for (k, l) in self.levels.iter().enumerate() {
            l.collect_params(&join(prefix, &format!("level{k}")), out);
        }
    }
}

/// Forward-backward consistency threshold in pixels.
pub const CONSISTENCY_THRESHOLD: f64 = 0.5;

/// Binary validity mask from a flow pair: a pixel is valid iff
/// `|f(x) + b(x + f(x))| < 0.5`, with `b` sampled bilinearly.
pub fn occlusion_oracle<T: Scalar>(fwd: &FlowField<T>, bwd: &FlowField<T>) -> Result<OcclusionMask<T>> {
    let f = fwd.tensor().detach();
    let b = bwd.tensor().detach();
    let b_at = warp_tensor(&b, &f)?;
    let (_, h, w) = f.chw()?;
    let p = h * w;
    let fd = f.data();
    let bd = b_at.data();
    let mask = (0..p)
        .map(|i| {
            let du = fd[i].f64() + bd[i].f64();
            let dv = fd[p + i].f64() + bd[p + i].f64();
            if (du * du + dv * dv).sqrt() < CONSISTENCY_THRESHOLD { T::one() } else { T::zero() }
        })
        .collect();
    OcclusionMask::new(Tensor::from_vec(&[1, h, w], mask)?)
}

/// Multiplies each warped frame by its mask, broadcast over channels.
pub fn apply_masks<T: Scalar>(
    i21: &Tensor<T>,
    i23: &Tensor<T>,
    m21: &OcclusionMask<T>,
    m23: &OcclusionMask<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    Ok((mul_mask(i21, m21.tensor())?, mul_mask(i23, m23.tensor())?))
}
