//! Task-specific image processing heads.

mod bicubic;

pub use bicubic::{bicubic_resize, bicubic_resize_to, cubic_axis, KEYS_A};

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::nn::{ConvStack, Init, LayerSpec, Module, ParamList};
use crate::tensor::{add, concat, scale, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Interpolation,
    Denoising,
    SuperResolution,
}

impl Task {
    /// Clip length the task consumes.
    pub fn frames(self) -> usize {
        match self {
            Task::Interpolation => 3,
            Task::Denoising | Task::SuperResolution => 7,
        }
    }

    pub fn default_learning_rate(self) -> f64 {
        match self {
            Task::Interpolation => 3e-4,
            Task::Denoising | Task::SuperResolution => 1e-4,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Interpolation => "interpolation",
            Task::Denoising => "denoising",
            Task::SuperResolution => "super-resolution",
        })
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interpolation" => Ok(Task::Interpolation),
            "denoising" | "deblocking" => Ok(Task::Denoising),
            "super-resolution" | "sr" => Ok(Task::SuperResolution),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub task: Task,
    pub use_mask: bool,
    pub frames: usize,
    pub channels: usize,
}

impl HeadConfig {
    pub fn new(task: Task, use_mask: bool) -> Self {
        HeadConfig {
            task,
            use_mask,
            frames: task.frames(),
            channels: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.use_mask && self.task != Task::Interpolation {
            return Err(Error::Config(format!("masks are only used for interpolation, not {}", self.task)));
        }
        if self.frames % 2 == 0 || self.frames < 3 {
            return Err(Error::Config(format!("clip length must be odd and at least 3, got {}", self.frames)));
        }
        Ok(())
    }

    pub fn input_channels(&self) -> usize {
        match self.task {
            Task::Interpolation => 2 * self.channels * if self.use_mask { 2 } else { 1 },
            Task::Denoising | Task::SuperResolution => self.frames * self.channels,
        }
    }

    fn layer_specs(&self) -> Vec<LayerSpec> {
        let spec = |out_channels, kernel, relu| LayerSpec { out_channels, kernel, norm: false, relu };
        match self.task {
            Task::Interpolation | Task::Denoising => vec![spec(64, 9, true), spec(64, 1, true), spec(self.channels, 1, false)],
            Task::SuperResolution => vec![
                spec(64, 9, true),
                spec(64, 9, true),
                spec(64, 1, true),
                spec(self.channels, 1, false),
            ],
        }
    }
}

/// Convolutional head; the final layer starts at zero so every head begins
/// at its analytic baseline.
#[derive(Debug, Clone)]
pub struct Head<T: Scalar> {
    pub config: HeadConfig,
    pub net: ConvStack<T>,
}

impl<T: Scalar> Head<T> {
    pub fn new(config: HeadConfig, rng: &mut impl Rng) -> Result<Self> {
        Self::with_last_init(config, Init::Zero, rng)
    }

    pub fn with_last_init(config: HeadConfig, last_init: Init, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let net = ConvStack::new(config.input_channels(), &config.layer_specs(), last_init, rng);
        Ok(Head { config, net })
    }

    /// `(I21 + I23) / 2 + residual([I21, I23, I21′, I23′])`.
    pub fn interpolate(&self, i21: &Tensor<T>, i23: &Tensor<T>, masked: Option<(&Tensor<T>, &Tensor<T>)>) -> Result<Tensor<T>> {
        self.expect_task(Task::Interpolation)?;
        let avg = scale(&add(i21, i23)?, 0.5);
        let x = match (masked, self.config.use_mask) {
            (None, false) => concat(&[i21, i23])?,
            (Some((a, b)), true) => concat(&[i21, i23, a, b])?,
            (Some(_), false) => return Err(Error::Config("masked frames supplied to a mask-free head".into())),
            (None, true) => return Err(Error::Config("mask-enabled head needs masked frames".into())),
        };
        add(&avg, &self.net.forward(&x)?)
    }

    /// Clean reference estimate from the registered stack in temporal order.
    pub fn denoise(&self, stack: &[Tensor<T>]) -> Result<Tensor<T>> {
        self.expect_task(Task::Denoising)?;
        self.net.forward(&self.stack(stack)?)
    }

    /// High-resolution reference estimate from a registered stack of
    /// upsampled frames; `upsampled_ref` is added as a global residual.
    pub fn super_resolve(&self, stack: &[Tensor<T>], upsampled_ref: &Tensor<T>) -> Result<Tensor<T>> {
        self.expect_task(Task::SuperResolution)?;
        let x = self.stack(stack)?;
        if x.shape()[1..] != upsampled_ref.shape()[1..] {
            return Err(Error::Shape(format!(
                "stack {:?} and reference {:?} differ in resolution",
                x.shape(),
                upsampled_ref.shape()
            )));
        }
        add(upsampled_ref, &self.net.forward(&x)?)
    }

    fn stack(&self, frames: &[Tensor<T>]) -> Result<Tensor<T>> {
        if frames.len() != self.config.frames {
            return Err(Error::Arity(format!(
                "{} head expects {} frames, got {}",
                self.config.task,
                self.config.frames,
                frames.len()
            )));
        }
        let refs: Vec<&Tensor<T>> = frames.iter().collect();
        concat(&refs)
    }

    fn expect_task(&self, task: Task) -> Result<()> {
        if self.config.task != task {
            return Err(Error::Config(format!("{} head used for {task}", self.config.task)));
        }
        Ok(())
    }
}

impl<T: Scalar> Module<T> for Head<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        self.net.collect_params(prefix, out);
    }
}
