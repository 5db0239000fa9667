//! Task models, training stages, inference and checkpoints.

mod checkpoint;
mod train;

pub use checkpoint::{ModelCheckpoint, NamedTensor, MAGIC, VERSION};
pub use train::{
    endpoint_error, evaluate, infer, pretrain_flow, pretrain_mask, train_joint, JointSample, LogRecord, TrainReport,
};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::VideoClip;
use crate::error::{Error, Result};
use crate::flownet::{FlowNet, FlowPyramidConfig};
use crate::heads::{bicubic_resize, Head, HeadConfig, Task};
use crate::masknet::{apply_masks, MaskNet, MaskPyramidConfig, OcclusionMask};
use crate::tensor::nn::{Init, Module, ParamList};
use crate::tensor::{add, scale, Adam, AdamConfig, Scalar, Tensor};
use crate::warp::{warp_tensor, FlowField};

/// Step counts and learning rates of the supervised pretraining stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub flow_learning_rate: f64,
    pub flow_steps: usize,
    /// Fine-tuning steps on degraded inputs (denoising and super-resolution).
    pub degraded_steps: usize,
    pub mask_learning_rate: f64,
    pub mask_steps: usize,
    /// Clips whose gradients are averaged per pretraining step.
    pub batch: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            flow_learning_rate: 1e-4,
            flow_steps: 2000,
            degraded_steps: 500,
            mask_learning_rate: 1e-3,
            mask_steps: 1000,
            batch: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    pub task: Task,
    /// Clip length; defaults to 3 for interpolation and 7 otherwise.
    pub frames: Option<usize>,
    /// Joint learning rate; defaults to the task's rate.
    pub learning_rate: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub use_mask: bool,
    /// Keep the flow networks at their pretrained values during joint training.
    pub fixed_flow: bool,
    /// Overrides `epochs × corpus size` when set.
    pub steps: Option<usize>,
    /// Side length of generated toy clips.
    pub resolution: Option<usize>,
    pub sr_factor: usize,
    pub flow: FlowPyramidConfig,
    pub mask: MaskPyramidConfig,
    pub pretrain: PretrainConfig,
    /// Loss records are averaged over this many steps.
    pub log_every: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            task: Task::Interpolation,
            frames: None,
            learning_rate: None,
            epochs: 15,
            batch_size: 1,
            weight_decay: 1e-4,
            seed: 0,
            use_mask: false,
            fixed_flow: false,
            steps: None,
            resolution: None,
            sr_factor: 4,
            flow: FlowPyramidConfig::default(),
            mask: MaskPyramidConfig::default(),
            pretrain: PretrainConfig::default(),
            log_every: 50,
        }
    }
}

impl TaskConfig {
    pub fn new(task: Task) -> Self {
        TaskConfig { task, ..Default::default() }
    }

    pub fn frames(&self) -> usize {
        self.frames.unwrap_or(self.task.frames())
    }

    pub fn reference(&self) -> usize {
        self.frames() / 2
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate.unwrap_or(self.task.default_learning_rate())
    }

    pub fn head_config(&self) -> HeadConfig {
        let mut h = HeadConfig::new(self.task, self.use_mask);
        h.frames = self.frames();
        h
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, msg: String| Err(Error::Config(format!("{field}: {msg}")));
        let n = self.frames();
        if n % 2 == 0 || n < 3 {
            return fail("frames", format!("must be odd and at least 3, got {n}"));
        }
        if self.task == Task::Interpolation && n != 3 {
            return fail("frames", format!("interpolation uses 3 frames, got {n}"));
        }
        let lr = self.learning_rate();
        if !(lr > 0.0 && lr.is_finite()) {
            return fail("learning_rate", format!("must be positive, got {lr}"));
        }
        if self.epochs == 0 {
            return fail("epochs", "must be positive".into());
        }
        if self.batch_size != 1 {
            return fail("batch_size", format!("only 1 is supported, got {}", self.batch_size));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail("weight_decay", format!("must be non-negative, got {}", self.weight_decay));
        }
        if self.steps == Some(0) {
            return fail("steps", "must be positive".into());
        }
        if self.resolution == Some(0) {
            return fail("resolution", "must be positive".into());
        }
        if self.sr_factor == 0 {
            return fail("sr_factor", "must be positive".into());
        }
        if self.log_every == 0 {
            return fail("log_every", "must be positive".into());
        }
        if self.use_mask && self.task != Task::Interpolation {
            return fail("use_mask", format!("masks are only used for interpolation, not {}", self.task));
        }
        let p = &self.pretrain;
        if p.batch == 0 {
            return fail("pretrain.batch", "must be positive".into());
        }
        for (name, v) in [
            ("pretrain.flow_learning_rate", p.flow_learning_rate),
            ("pretrain.mask_learning_rate", p.mask_learning_rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(name, format!("must be positive, got {v}"));
            }
        }
        self.flow.validate().map_err(|e| Error::Config(format!("flow: {e}")))?;
        self.mask.validate().map_err(|e| Error::Config(format!("mask: {e}")))?;
        Ok(())
    }

    fn adam(&self, lr: f64) -> Result<Adam<f32>> {
        Adam::new(AdamConfig {
            lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        })
    }
}

/// Flow estimation for a task: interpolation learns one network per
/// direction, the other tasks share one network across frames.
#[derive(Debug, Clone)]
pub enum FlowModule<T: Scalar> {
    Pair { net21: FlowNet<T>, net23: FlowNet<T> },
    Shared(FlowNet<T>),
}

impl<T: Scalar> Module<T> for FlowModule<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        let p = |s: &str| if prefix.is_empty() { s.to_string() } else { format!("{prefix}.{s}") };
        match self {
            FlowModule::Pair { net21, net23 } => {
                net21.collect_params(&p("flow21"), out);
                net23.collect_params(&p("flow23"), out);
            }
            FlowModule::Shared(net) => net.collect_params(&p("flow"), out),
        }
    }
}

/// Flow, optional mask and head for one task.
#[derive(Debug, Clone)]
pub struct TaskModel<T: Scalar = f32> {
    pub config: TaskConfig,
    pub flow: FlowModule<T>,
    pub mask: Option<MaskNet<T>>,
    pub head: Head<T>,
}

impl<T: Scalar> TaskModel<T> {
    /// Every final layer starts at zero: zero flow, masks of 0.5 and the
    /// analytic head baseline.
    pub fn new(config: &TaskConfig, rng: &mut impl Rng) -> Result<Self> {
        Self::with_last_init(config, Init::Zero, rng)
    }

    pub fn with_last_init(config: &TaskConfig, last_init: Init, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let flow = match config.task {
            Task::Interpolation => FlowModule::Pair {
                net21: FlowNet::with_last_init(config.flow.clone(), last_init, rng)?,
                net23: FlowNet::with_last_init(config.flow.clone(), last_init, rng)?,
            },
            _ => FlowModule::Shared(FlowNet::with_last_init(config.flow.clone(), last_init, rng)?),
        };
        let mask = if config.use_mask {
            Some(MaskNet::with_last_init(config.mask.clone(), last_init, rng)?)
        } else {
            None
        };
        let head = Head::with_last_init(config.head_config(), last_init, rng)?;
        Ok(TaskModel {
            config: config.clone(),
            flow,
            mask,
            head,
        })
    }

    pub fn task(&self) -> Task {
        self.config.task
    }

    pub fn flow_params(&self) -> ParamList<T> {
        self.flow.params("")
    }

    pub fn mask_params(&self) -> ParamList<T> {
        self.mask.as_ref().map(|m| m.params("mask")).unwrap_or_default()
    }

    pub fn head_params(&self) -> ParamList<T> {
        self.head.params("head")
    }

    /// Inputs in the resolution flows are estimated at: the frames
    /// themselves, or their bicubic upsampling for super-resolution.
    pub fn prepare(&self, inputs: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        let expected = match self.task() {
            Task::Interpolation => 2,
            _ => self.config.frames(),
        };
        if inputs.len() != expected {
            return Err(Error::Arity(format!(
                "{} model takes {expected} input frames, got {}",
                self.task(),
                inputs.len()
            )));
        }
        match self.task() {
            Task::SuperResolution => inputs
                .iter()
                .map(|f| bicubic_resize(f, self.config.sr_factor as f64))
                .collect(),
            _ => Ok(inputs.to_vec()),
        }
    }

    /// Flows from the reference to each prepared frame. Interpolation yields
    /// `[v21, v23]`; the other tasks yield one flow per frame, zero at the
    /// reference.
    pub fn estimate_flows(&self, prepared: &[Tensor<T>]) -> Result<Vec<FlowField<T>>> {
        match &self.flow {
            FlowModule::Pair { net21, net23 } => {
                let (v21, v23) = crate::flownet::estimate_interp_flows(&prepared[0], &prepared[1], net21, net23)?;
                Ok(vec![v21, v23])
            }
            FlowModule::Shared(net) => {
                let r = self.config.reference();
                let (_, h, w) = prepared[r].chw()?;
                prepared
                    .iter()
                    .enumerate()
                    .map(|(k, f)| if k == r { Ok(FlowField::zeros(h, w)) } else { net.estimate(&prepared[r], f) })
                    .collect()
            }
        }
    }

    /// Task output from raw inputs (two frames for interpolation, `N`
    /// frames otherwise).
    pub fn forward(&self, inputs: &[Tensor<T>]) -> Result<Tensor<T>> {
        let prepared = self.prepare(inputs)?;
        let flows = self.estimate_flows(&prepared)?;
        self.forward_prepared(&prepared, &flows)
    }

    /// Task output with externally supplied flows.
    pub fn forward_with_flows(&self, inputs: &[Tensor<T>], flows: &[FlowField<T>]) -> Result<Tensor<T>> {
        let prepared = self.prepare(inputs)?;
        self.forward_prepared(&prepared, flows)
    }

    /// Interpolation masks for the given flows, if the model has a mask network.
    pub fn masks(&self, flows: &[FlowField<T>]) -> Result<Option<(OcclusionMask<T>, OcclusionMask<T>)>> {
        match &self.mask {
            Some(m) if flows.len() == 2 => Ok(Some(m.estimate(&flows[0], &flows[1])?)),
            Some(_) => Err(Error::Arity(format!("mask network takes 2 flows, got {}", flows.len()))),
            None => Ok(None),
        }
    }

    fn forward_prepared(&self, prepared: &[Tensor<T>], flows: &[FlowField<T>]) -> Result<Tensor<T>> {
        if flows.len() != prepared.len() {
            return Err(Error::Arity(format!("{} flows for {} frames", flows.len(), prepared.len())));
        }
        let warped = prepared
            .iter()
            .zip(flows)
            .map(|(f, v)| warp_tensor(f, v.tensor()))
            .collect::<Result<Vec<_>>>()?;
        match self.task() {
            Task::Interpolation => match self.masks(flows)? {
                Some((m21, m23)) => {
                    let (a, b) = apply_masks(&warped[0], &warped[1], &m21, &m23)?;
                    self.head.interpolate(&warped[0], &warped[1], Some((&a, &b)))
                }
                None => self.head.interpolate(&warped[0], &warped[1], None),
            },
            Task::Denoising => self.head.denoise(&warped),
            Task::SuperResolution => {
                let r = self.config.reference();
                self.head.super_resolve(&warped, &prepared[r])
            }
        }
    }
}

impl<T: Scalar> Module<T> for TaskModel<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        self.flow.collect_params(prefix, out);
        if let Some(m) = &self.mask {
            m.collect_params(&crate::tensor::nn::join(prefix, "mask"), out);
        }
        self.head.collect_params(&crate::tensor::nn::join(prefix, "head"), out);
    }
}

/// Which parameter groups a checkpoint load must supply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadScope {
    All,
    Flow,
    Mask,
    /// Whatever the checkpoint holds; absent parameters keep their values.
    Available,
}

const CONFIG_TENSOR: &str = "config.json";
const ADAM_STEP: &str = "adam.step";

impl TaskModel<f32> {
    /// Parameters, the configuration echo and, if given, optimizer moments.
    pub fn to_checkpoint(&self, optimizer: Option<&Adam<f32>>) -> Result<ModelCheckpoint> {
        let mut ck = ModelCheckpoint::default();
        ck.push_text(CONFIG_TENSOR, &serde_json::to_string(&self.config)?);
        for (name, p) in self.params("") {
            ck.push(name, p.shape(), p.to_vec());
        }
        if let Some(opt) = optimizer {
            ck.push(ADAM_STEP, &[1], vec![opt.state.step as f32]);
            for (prefix, moments) in [("adam.m", &opt.state.first), ("adam.v", &opt.state.second)] {
                for (name, m) in moments {
                    ck.push(format!("{prefix}.{name}"), &[m.len()], m.clone());
                }
            }
        }
        Ok(ck)
    }

    /// Configuration echoed in a checkpoint.
    pub fn checkpoint_config(ck: &ModelCheckpoint) -> Result<TaskConfig> {
        let text = ck
            .text(CONFIG_TENSOR)?
            .ok_or_else(|| Error::Format(format!("checkpoint has no {CONFIG_TENSOR}")))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Builds a model from the configuration echo and loads every parameter.
    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self> {
        let config = Self::checkpoint_config(ck)?;
        let mut rng = crate::data::item_rng(config.seed, 0, 0);
        let model = TaskModel::new(&config, &mut rng)?;
        model.load(ck, LoadScope::All)?;
        Ok(model)
    }

    /// Copies parameters from `ck`. Tensors outside the scope are ignored;
    /// missing or misshapen tensors inside it are arity errors naming the
    /// tensor.
    pub fn load(&self, ck: &ModelCheckpoint, scope: LoadScope) -> Result<()> {
        if let Some(text) = ck.text(CONFIG_TENSOR)? {
            let cfg: TaskConfig = serde_json::from_str(&text)?;
            if cfg.task != self.task() {
                return Err(Error::Config(format!(
                    "checkpoint was trained for {}, model is {}",
                    cfg.task,
                    self.task()
                )));
            }
        }
        let params = match scope {
            LoadScope::All | LoadScope::Available => self.params(""),
            LoadScope::Flow => self.flow_params(),
            LoadScope::Mask => {
                if self.mask.is_none() {
                    return Err(Error::Config("model has no mask network".into()));
                }
                self.mask_params()
            }
        };
        if scope == LoadScope::All {
            let known: std::collections::BTreeSet<String> = params.iter().map(|(n, _)| n.clone()).collect();
            if let Some(extra) = ck
                .names()
                .find(|n| *n != CONFIG_TENSOR && !n.starts_with("adam.") && !known.contains(*n))
            {
                return Err(Error::Arity(format!("checkpoint tensor {extra} has no counterpart in the model")));
            }
        }
        let mut loaded = 0;
        for (name, p) in &params {
            let Some(t) = ck.get(name) else {
                if scope == LoadScope::Available {
                    continue;
                }
                return Err(Error::Arity(format!("checkpoint lacks tensor {name}")));
            };
            if t.shape != p.shape() {
                return Err(Error::Arity(format!(
                    "tensor {name} has shape {:?} in the checkpoint, model expects {:?}",
                    t.shape,
                    p.shape()
                )));
            }
            p.data_mut().copy_from_slice(&t.data);
            loaded += 1;
        }
        if scope == LoadScope::Available && loaded == 0 && !params.is_empty() {
            return Err(Error::Arity("checkpoint holds no parameter of this model".into()));
        }
        Ok(())
    }

    /// Optimizer moments stored in a checkpoint, if any.
    pub fn optimizer_state(ck: &ModelCheckpoint, config: AdamConfig) -> Result<Option<Adam<f32>>> {
        let Some(step) = ck.get(ADAM_STEP) else { return Ok(None) };
        let mut opt = Adam::new(config)?;
        opt.state.step = step.data.first().copied().unwrap_or(0.0) as u64;
        for t in &ck.tensors {
            if let Some(name) = t.name.strip_prefix("adam.m.") {
                opt.state.first.insert(name.to_string(), t.data.clone());
            } else if let Some(name) = t.name.strip_prefix("adam.v.") {
                opt.state.second.insert(name.to_string(), t.data.clone());
            }
        }
        Ok(Some(opt))
    }
}

/// SHA-256 over parameter names, shapes and value bits.
pub fn param_hash<T: Scalar>(params: &ParamList<T>) -> String {
    let mut h = Sha256::new();
    for (name, p) in params {
        h.update(name.as_bytes());
        for d in p.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in p.data().iter() {
            h.update(v.f64().to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Raw model inputs of a clip: frames 1 and 3 for interpolation, every
/// frame otherwise.
pub fn model_inputs(task: Task, clip: &VideoClip) -> Result<Vec<Tensor<f32>>> {
    match task {
        Task::Interpolation => {
            if clip.len() != 3 {
                return Err(Error::Arity(format!("interpolation needs 3-frame clips, {} has {}", clip.id, clip.len())));
            }
            Ok(vec![clip.frames[0].clone(), clip.frames[2].clone()])
        }
        _ => Ok(clip.frames.clone()),
    }
}

/// Mean of frames warped onto the reference by the given flows.
pub fn warp_average(frames: &[Tensor<f32>], flows: &[FlowField]) -> Result<Tensor<f32>> {
    if frames.len() != flows.len() || frames.is_empty() {
        return Err(Error::Arity(format!("{} frames and {} flows", frames.len(), flows.len())));
    }
    let mut acc = warp_tensor(&frames[0], flows[0].tensor())?;
    for (f, v) in frames.iter().zip(flows).skip(1) {
        acc = add(&acc, &warp_tensor(f, v.tensor())?)?;
    }
    Ok(scale(&acc, 1.0 / frames.len() as f64))
}

/// Warp-and-average with ground-truth flows: frames 1 and 3 for
/// interpolation, every frame otherwise.
pub fn ground_truth_baseline(task: Task, clip: &VideoClip) -> Result<Tensor<f32>> {
    let flows = clip
        .flows
        .as_ref()
        .ok_or_else(|| Error::Data(format!("clip {} lacks ground-truth flow", clip.id)))?;
    match task {
        Task::Interpolation => {
            let inputs = model_inputs(task, clip)?;
            warp_average(&inputs, &[flows[0].clone(), flows[2].clone()])
        }
        Task::Denoising => warp_average(&clip.frames, flows),
        Task::SuperResolution => Err(Error::Config("super-resolution has no warp-and-average baseline".into())),
    }
}
