//! Supervised pretraining, joint training, inference and evaluation.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{model_inputs, TaskConfig, TaskModel};
use crate::data::{item_rng, VideoClip};
use crate::error::{Error, Result};
use crate::flownet::FlowNet;
use crate::heads::{bicubic_resize, Task};
use crate::metrics::{psnr, ssim, ClipMetrics, MetricReport};
use crate::tensor::nn::ParamList;
use crate::tensor::{add, l1_loss, scale, Adam, Tensor};
use crate::warp::FlowField;

const PURPOSE_ORDER: u64 = 11;
const PURPOSE_FRAME: u64 = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub phase: String,
    pub step: usize,
    pub epoch: usize,
    /// Mean training loss since the previous record.
    pub loss: Option<f64>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    /// Loss of every step, in order.
    pub losses: Vec<f64>,
    pub log: Vec<LogRecord>,
    pub optimizer: Option<Adam<f32>>,
}

impl TrainReport {
    pub fn to_json_lines(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.log {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }

    fn append(&mut self, other: TrainReport) {
        self.losses.extend(other.losses);
        self.log.extend(other.log);
        self.optimizer = other.optimizer;
    }
}

/// Seeded visiting order: a fresh permutation per epoch, truncated to `steps`.
fn schedule(items: usize, epochs: usize, steps: Option<usize>, seed: u64) -> Vec<(usize, usize)> {
    let total = steps.unwrap_or(epochs * items);
    let mut out = Vec::with_capacity(total);
    let mut epoch = 0;
    while out.len() < total && items > 0 {
        let mut perm: Vec<usize> = (0..items).collect();
        perm.shuffle(&mut item_rng(seed, epoch, PURPOSE_ORDER));
        out.extend(perm.into_iter().take(total - out.len()).map(|i| (epoch, i)));
        epoch += 1;
    }
    out
}

struct Logger<'a> {
    phase: &'a str,
    every: usize,
    window: Vec<f64>,
    report: TrainReport,
}

impl<'a> Logger<'a> {
    fn new(phase: &'a str, every: usize) -> Self {
        Logger {
            phase,
            every,
            window: Vec::new(),
            report: TrainReport::default(),
        }
    }

    fn loss(&mut self, step: usize, epoch: usize, loss: f64, last: bool) {
        self.report.losses.push(loss);
        self.window.push(loss);
        if self.window.len() == self.every || last {
            let mean = self.window.iter().sum::<f64>() / self.window.len() as f64;
            self.window.clear();
            self.report.log.push(LogRecord {
                phase: self.phase.to_string(),
                step: step + 1,
                epoch,
                loss: Some(mean),
                psnr: None,
                ssim: None,
            });
        }
    }
}

fn optimize(loss: &Tensor<f32>, params: &ParamList<f32>, opt: &mut Adam<f32>) -> Result<f64> {
    let value = accumulate(loss, 1)?;
    step(params, opt)?;
    Ok(value)
}

/// Adds the gradient of `loss / batch` to the parameters.
fn accumulate(loss: &Tensor<f32>, batch: usize) -> Result<f64> {
    let value = loss.item() as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("training loss is {value}")));
    }
    if batch == 1 {
        loss.backward()?;
    } else {
        scale(loss, 1.0 / batch as f64).backward()?;
    }
    Ok(value)
}

fn step(params: &ParamList<f32>, opt: &mut Adam<f32>) -> Result<()> {
    opt.step(params)?;
    for (_, p) in params {
        p.zero_grad();
    }
    Ok(())
}

fn require_flows(corpus: &[VideoClip]) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::Data("empty training corpus".into()));
    }
    if let Some(c) = corpus.iter().find(|c| c.flows.is_none()) {
        return Err(Error::Data(format!("clip {} lacks ground-truth flow", c.id)));
    }
    Ok(())
}

fn flow_step_loss(
    model: &TaskModel<f32>,
    frames: &[Tensor<f32>],
    clip: &VideoClip,
    rng: &mut impl Rng,
) -> Result<Tensor<f32>> {
    let gt = clip.flows.as_ref().expect("checked by require_flows");
    match &model.flow {
        super::FlowModule::Pair { net21, net23 } => {
            let (v21, v23) = crate::flownet::estimate_interp_flows(&frames[0], &frames[2], net21, net23)?;
            let l = add(&l1_loss(v21.tensor(), gt[0].tensor())?, &l1_loss(v23.tensor(), gt[2].tensor())?)?;
            Ok(scale(&l, 0.5))
        }
        super::FlowModule::Shared(net) => {
            let r = clip.reference;
            let mut k = rng.random_range(0..clip.len() - 1);
            if k >= r {
                k += 1;
            }
            let v = net.estimate(&frames[r], &frames[k])?;
            l1_loss(v.tensor(), gt[k].tensor())
        }
    }
}

fn flow_phase(
    model: &TaskModel<f32>,
    corpus: &[VideoClip],
    config: &TaskConfig,
    steps: usize,
    phase: &str,
    frames_of: impl Fn(&VideoClip) -> Result<Vec<Tensor<f32>>>,
    opt: Adam<f32>,
) -> Result<TrainReport> {
    let params = model.flow_params();
    let mut opt = opt;
    let mut log = Logger::new(phase, config.log_every);
    let seed = config.seed ^ if phase == "flow" { 0 } else { 0x5eed };
    let batch = config.pretrain.batch;
    let order = schedule(corpus.len(), 1, Some(steps * batch), seed);
    for (s, chunk) in order.chunks(batch).enumerate() {
        let mut total = 0.0;
        for (j, &(_, i)) in chunk.iter().enumerate() {
            let clip = &corpus[i];
            let frames = frames_of(clip)?;
            let mut rng = item_rng(seed, s * batch + j, PURPOSE_FRAME);
            total += accumulate(&flow_step_loss(model, &frames, clip, &mut rng)?, batch)?;
        }
        step(&params, &mut opt)?;
        log.loss(s, chunk[0].0, total / batch as f64, s + 1 == steps);
    }
    log.report.optimizer = Some(opt);
    Ok(log.report)
}

/// Supervised flow pretraining with a mean L1 flow loss. Denoising and
/// super-resolution models are then fine-tuned on their degraded inputs.
pub fn pretrain_flow(model: &TaskModel<f32>, corpus: &[VideoClip], config: &TaskConfig) -> Result<TrainReport> {
    config.validate()?;
    require_flows(corpus)?;
    let p = &config.pretrain;
    let mut report = flow_phase(
        model,
        corpus,
        config,
        p.flow_steps,
        "flow",
        |c| Ok(c.ground_truth_frames().to_vec()),
        config.adam(p.flow_learning_rate)?,
    )?;
    if model.task() != Task::Interpolation && p.degraded_steps > 0 {
        let factor = config.sr_factor as f64;
        let task = model.task();
        let degraded = flow_phase(
            model,
            corpus,
            config,
            p.degraded_steps,
            "flow-degraded",
            |c| match task {
                Task::SuperResolution if c.frames[0].shape() != c.ground_truth_frames()[0].shape() => {
                    c.frames.iter().map(|f| bicubic_resize(f, factor)).collect()
                }
                _ => Ok(c.frames.clone()),
            },
            config.adam(p.flow_learning_rate)?,
        )?;
        report.append(degraded);
    }
    Ok(report)
}

/// Fits the mask network to the clips' occlusion masks, with flows from the
/// frozen flow networks as input.
pub fn pretrain_mask(model: &TaskModel<f32>, corpus: &[VideoClip], config: &TaskConfig) -> Result<TrainReport> {
    config.validate()?;
    if model.mask.is_none() {
        return Err(Error::Config("model has no mask network".into()));
    }
    if corpus.is_empty() {
        return Err(Error::Data("empty training corpus".into()));
    }
    if let Some(c) = corpus.iter().find(|c| c.masks.is_none()) {
        return Err(Error::Data(format!("clip {} lacks occlusion masks", c.id)));
    }
    let params = model.mask_params();
    let mut opt = config.adam(config.pretrain.mask_learning_rate)?;
    let mut log = Logger::new("mask", config.log_every);
    let (steps, batch) = (config.pretrain.mask_steps, config.pretrain.batch);
    let order = schedule(corpus.len(), 1, Some(steps * batch), config.seed ^ 0x3a5c);
    for (s, chunk) in order.chunks(batch).enumerate() {
        let mut total = 0.0;
        for &(_, i) in chunk {
            let clip = &corpus[i];
            let inputs = model.prepare(&model_inputs(model.task(), clip)?)?;
            let flows: Vec<FlowField> = model
                .estimate_flows(&inputs)?
                .into_iter()
                .map(|f| FlowField::new(f.tensor().detach()))
                .collect::<Result<_>>()?;
            let (m21, m23) = model.masks(&flows)?.expect("mask network present");
            let gt = clip.masks.as_ref().expect("checked above");
            let loss = scale(
                &add(&l1_loss(m21.tensor(), gt[0].tensor())?, &l1_loss(m23.tensor(), gt[2].tensor())?)?,
                0.5,
            );
            total += accumulate(&loss, batch)?;
        }
        step(&params, &mut opt)?;
        log.loss(s, chunk[0].0, total / batch as f64, s + 1 == steps);
    }
    log.report.optimizer = Some(opt);
    Ok(log.report)
}

/// A training example stripped of every label except the target frame, so
/// joint training cannot see ground-truth flow.
#[derive(Debug, Clone)]
pub struct JointSample {
    pub id: String,
    pub inputs: Vec<Tensor<f32>>,
    pub target: Tensor<f32>,
}

impl JointSample {
    pub fn from_clip(task: Task, clip: &VideoClip) -> Result<Self> {
        Ok(JointSample {
            id: clip.id.clone(),
            inputs: model_inputs(task, clip)?,
            target: clip.target().clone(),
        })
    }
}

/// End-to-end training on the task loss. With `fixed_flow` the flow
/// networks are evaluated once per sample and never updated.
pub fn train_joint(
    model: &TaskModel<f32>,
    samples: &[JointSample],
    validation: &[JointSample],
    config: &TaskConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if config.task != model.task() {
        return Err(Error::Config(format!(
            "config is for {}, model is {}",
            config.task,
            model.task()
        )));
    }
    if samples.is_empty() {
        return Err(Error::Data("empty training corpus".into()));
    }
    let params: ParamList<f32> = if config.fixed_flow {
        let mut p = model.mask_params();
        p.extend(model.head_params());
        p
    } else {
        model.params_all()
    };
    let fixed: Option<Vec<Vec<FlowField>>> = if config.fixed_flow {
        Some(samples.iter().map(|s| detached_flows(model, &s.inputs)).collect::<Result<_>>()?)
    } else {
        None
    };
    let mut opt = config.adam(config.learning_rate())?;
    let mut log = Logger::new("joint", config.log_every);
    let order = schedule(samples.len(), config.epochs, config.steps, config.seed);
    let n = order.len();
    let mut epoch_done = 0;
    for (step, (epoch, i)) in order.into_iter().enumerate() {
        if epoch != epoch_done {
            log_validation(model, validation, &mut log, step, epoch_done)?;
            epoch_done = epoch;
        }
        let s = &samples[i];
        let out = match &fixed {
            Some(flows) => model.forward_with_flows(&s.inputs, &flows[i])?,
            None => model.forward(&s.inputs)?,
        };
        let loss = l1_loss(&out, &s.target)?;
        let v = optimize(&loss, &params, &mut opt)?;
        log.loss(step, epoch, v, step + 1 == n);
    }
    log_validation(model, validation, &mut log, n, epoch_done)?;
    log.report.optimizer = Some(opt);
    Ok(log.report)
}

fn detached_flows(model: &TaskModel<f32>, inputs: &[Tensor<f32>]) -> Result<Vec<FlowField>> {
    let prepared = model.prepare(inputs)?;
    model
        .estimate_flows(&prepared)?
        .into_iter()
        .map(|f| FlowField::new(f.tensor().detach()))
        .collect()
}

fn log_validation(
    model: &TaskModel<f32>,
    validation: &[JointSample],
    log: &mut Logger<'_>,
    step: usize,
    epoch: usize,
) -> Result<()> {
    if validation.is_empty() {
        return Ok(());
    }
    let r = evaluate_samples(model, validation)?;
    log.report.log.push(LogRecord {
        phase: log.phase.to_string(),
        step,
        epoch,
        loss: None,
        psnr: Some(r.mean_psnr),
        ssim: Some(r.mean_ssim),
    });
    Ok(())
}

/// Output frame for one clip.
pub fn infer(model: &TaskModel<f32>, clip: &VideoClip) -> Result<Tensor<f32>> {
    let inputs = model_inputs(model.task(), clip)?;
    Ok(model.forward(&inputs)?.detach())
}

fn evaluate_samples(model: &TaskModel<f32>, samples: &[JointSample]) -> Result<MetricReport> {
    let clips = samples
        .iter()
        .map(|s| {
            let out = model.forward(&s.inputs)?.detach();
            Ok(ClipMetrics {
                clip: s.id.clone(),
                psnr: psnr(&out, &s.target)?,
                ssim: ssim(&out, &s.target)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::from_clips(clips))
}

/// PSNR and SSIM of the model output against each clip's target.
pub fn evaluate(model: &TaskModel<f32>, clips: &[VideoClip]) -> Result<MetricReport> {
    let samples = clips
        .iter()
        .map(|c| JointSample::from_clip(model.task(), c))
        .collect::<Result<Vec<_>>>()?;
    evaluate_samples(model, &samples)
}

impl TaskModel<f32> {
    fn params_all(&self) -> ParamList<f32> {
        crate::tensor::nn::Module::params(self, "")
    }
}

/// Mean end-point error of a flow network on the clips' reference-to-frame
/// pairs, on ground-truth frames.
pub fn endpoint_error(net: &FlowNet<f32>, clips: &[VideoClip]) -> Result<f64> {
    let (mut total, mut count) = (0.0, 0usize);
    for c in clips {
        let gt = c.flows.as_ref().ok_or_else(|| Error::Data(format!("clip {} lacks ground-truth flow", c.id)))?;
        let frames = c.ground_truth_frames();
        for k in (0..c.len()).filter(|k| *k != c.reference) {
            let v = net.estimate(&frames[c.reference], &frames[k])?;
            let (p, g) = (v.tensor().data(), gt[k].tensor().data());
            let n = p.len() / 2;
            for i in 0..n {
                total += ((p[i] - g[i]).powi(2) + (p[n + i] - g[n + i]).powi(2)).sqrt() as f64;
            }
            count += n;
        }
    }
    if count == 0 {
        return Err(Error::Data("no flow pairs to evaluate".into()));
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::super::{param_hash, LoadScope};
    use super::*;
    use crate::data::{gen_flow_clips, gen_triangle_toy, ClipMeta, FlowClipParams, TriangleParams};
    use crate::flownet::FlowPyramidConfig;
    use crate::masknet::{MaskPyramidConfig, OcclusionMask};
    use crate::tensor::nn::Module;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(task: Task, use_mask: bool) -> TaskConfig {
        let mut c = TaskConfig::new(task);
        c.use_mask = use_mask;
        c.flow = FlowPyramidConfig {
            levels: 2,
            channels: vec![8, 8, 2],
            kernel: 3,
            ..Default::default()
        };
        c.mask = MaskPyramidConfig {
            levels: 2,
            channels: vec![8, 2],
            kernel: 3,
        };
        c.log_every = 5;
        c
    }

    fn toy(count: usize, seed: u64) -> Vec<VideoClip> {
        gen_triangle_toy(&TriangleParams {
            size: 16,
            side: (6, 8),
            speed: (1, 2),
            count,
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn schedule_covers_each_epoch() {
        let s = schedule(5, 2, None, 3);
        assert_eq!(s.len(), 10);
        let mut e0: Vec<usize> = s[..5].iter().map(|(_, i)| *i).collect();
        e0.sort();
        assert_eq!(e0, vec![0, 1, 2, 3, 4]);
        assert!(s[5..].iter().all(|(e, _)| *e == 1));
        assert_eq!(schedule(5, 2, Some(12), 3).len(), 12);
        assert_eq!(schedule(5, 2, None, 3), schedule(5, 2, None, 3));
    }

    #[test]
    fn first_flow_loss_is_mean_gt_magnitude() {
        let mut cfg = small(Task::Interpolation, false);
        cfg.pretrain.flow_steps = 1;
        let clips = toy(1, 3);
        let m = TaskModel::new(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let r = pretrain_flow(&m, &clips, &cfg).unwrap();
        let gt = clips[0].flows.as_ref().unwrap();
        let mean_abs = |f: &FlowField| f.tensor().data().iter().map(|v| v.abs() as f64).sum::<f64>() / f.tensor().numel() as f64;
        let expect = 0.5 * (mean_abs(&gt[0]) + mean_abs(&gt[2]));
        assert!((r.losses[0] - expect).abs() < 1e-6, "{} vs {expect}", r.losses[0]);
    }

    #[test]
    fn flow_pretraining_is_deterministic_and_learns() {
        let mut cfg = small(Task::Denoising, false);
        cfg.frames = Some(3);
        cfg.pretrain.flow_steps = 40;
        cfg.pretrain.degraded_steps = 5;
        let clips = gen_flow_clips(&FlowClipParams {
            size: 16,
            count: 8,
            seed: 2,
            side: (5, 7),
            sprite_speed: 2,
            background_speed: 1.5,
            ..Default::default()
        })
        .unwrap();
        let run = || {
            let m = TaskModel::new(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            let r = pretrain_flow(&m, &clips, &cfg).unwrap();
            (r, m)
        };
        let (a, ma) = run();
        let (b, mb) = run();
        assert_eq!(a.losses, b.losses);
        assert_eq!(param_hash(&ma.flow_params()), param_hash(&mb.flow_params()));
        assert_eq!(a.losses.len(), 45);
        assert!(a.log.iter().any(|r| r.phase == "flow-degraded"));
        let early: f64 = a.losses[..10].iter().sum();
        let late: f64 = a.losses[30..40].iter().sum();
        assert!(late < early, "{early} -> {late}");
    }

    #[test]
    fn flow_pretraining_needs_gt_flow() {
        let cfg = small(Task::Interpolation, false);
        let mut clips = toy(2, 1);
        clips[1].flows = None;
        let m = TaskModel::new(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(matches!(pretrain_flow(&m, &clips, &cfg), Err(Error::Data(_))));
    }

    #[test]
    fn mask_pretraining_fits_all_ones() {
        let mut cfg = small(Task::Interpolation, true);
        cfg.pretrain.mask_steps = 150;
        cfg.pretrain.mask_learning_rate = 1e-2;
        let mut clips = toy(4, 5);
        for c in &mut clips {
            c.masks = Some(vec![OcclusionMask::ones(16, 16); 3]);
        }
        let m = TaskModel::new(&cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let flow_before = param_hash(&m.flow_params());
        let r = pretrain_mask(&m, &clips, &cfg).unwrap();
        assert_eq!(param_hash(&m.flow_params()), flow_before);
        assert!(r.losses[0] > 0.45);
        let mut mae = 0.0;
        for c in &clips {
            let inputs = m.prepare(&model_inputs(Task::Interpolation, c).unwrap()).unwrap();
            let flows = m.estimate_flows(&inputs).unwrap();
            let (a, b) = m.masks(&flows).unwrap().unwrap();
            mae += (2.0 - a.mean() - b.mean()) / 2.0;
        }
        mae /= clips.len() as f64;
        assert!(mae < 0.05, "mask MAE {mae}");
        let firsts: Vec<f64> = r.log.iter().filter_map(|x| x.loss).collect();
        assert!(firsts.windows(2).filter(|w| w[1] > w[0]).count() <= firsts.len() / 4, "{firsts:?}");
    }

    #[test]
    fn mask_pretraining_needs_mask_net() {
        let cfg = small(Task::Interpolation, false);
        let m = TaskModel::new(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(matches!(pretrain_mask(&m, &toy(1, 0), &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn joint_training_moves_every_group() {
        let mut cfg = small(Task::Interpolation, true);
        cfg.epochs = 1;
        let clips = toy(6, 8);
        let samples: Vec<JointSample> = clips.iter().map(|c| JointSample::from_clip(cfg.task, c).unwrap()).collect();
        let m = TaskModel::with_last_init(&cfg, crate::tensor::nn::Init::Normal(1e-3), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let before = [param_hash(&m.flow_params()), param_hash(&m.mask_params()), param_hash(&m.head_params())];
        let r = train_joint(&m, &samples, &samples[..2], &cfg).unwrap();
        let after = [param_hash(&m.flow_params()), param_hash(&m.mask_params()), param_hash(&m.head_params())];
        for k in 0..3 {
            assert_ne!(before[k], after[k], "group {k} unchanged");
        }
        assert_eq!(r.losses.len(), 6);
        let lines = r.to_json_lines().unwrap();
        assert!(lines.lines().any(|l| l.contains("\"psnr\":") && !l.contains("\"psnr\":null")));
    }

    #[test]
    fn fixed_flow_touches_no_flow_parameter() {
        let mut cfg = small(Task::Interpolation, false);
        cfg.steps = Some(4);
        cfg.fixed_flow = true;
        let clips = toy(4, 8);
        let samples: Vec<JointSample> = clips.iter().map(|c| JointSample::from_clip(cfg.task, c).unwrap()).collect();
        let m = TaskModel::with_last_init(&cfg, crate::tensor::nn::Init::Normal(1e-3), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let flow = param_hash(&m.flow_params());
        let head = param_hash(&m.head_params());
        train_joint(&m, &samples, &[], &cfg).unwrap();
        assert_eq!(param_hash(&m.flow_params()), flow);
        assert_ne!(param_hash(&m.head_params()), head);
    }

    #[test]
    fn joint_training_is_deterministic() {
        let mut cfg = small(Task::Interpolation, false);
        cfg.steps = Some(5);
        let clips = toy(3, 2);
        let samples: Vec<JointSample> = clips.iter().map(|c| JointSample::from_clip(cfg.task, c).unwrap()).collect();
        let run = || {
            let m = TaskModel::new(&cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
            let r = train_joint(&m, &samples, &[], &cfg).unwrap();
            (r.losses, m.to_checkpoint(r.optimizer.as_ref()).unwrap().to_bytes().unwrap())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn joint_rejects_task_mismatch() {
        let cfg = small(Task::Interpolation, false);
        let m = TaskModel::new(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let other = small(Task::Denoising, false);
        let s = JointSample::from_clip(Task::Interpolation, &toy(1, 0)[0]).unwrap();
        assert!(matches!(train_joint(&m, &[s], &[], &other), Err(Error::Config(_))));
        let d = TaskModel::new(&other, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(matches!(d.load(&m.to_checkpoint(None).unwrap(), LoadScope::Flow), Err(Error::Config(_))));
    }

    #[test]
    fn infer_is_pure_and_checks_arity() {
        let cfg = small(Task::Interpolation, false);
        let m = TaskModel::with_last_init(&cfg, crate::tensor::nn::Init::He, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let c = &toy(1, 4)[0];
        let a = infer(&m, c).unwrap();
        let b = infer(&m, c).unwrap();
        assert_eq!(a.to_vec(), b.to_vec());
        let five = VideoClip::new("five", vec![c.frames[0].clone(); 5], ClipMeta::default()).unwrap();
        assert!(matches!(infer(&m, &five), Err(Error::Arity(_))));
        assert_eq!(m.params("").len(), crate::tensor::nn::Module::params(&m, "").len());
    }

    #[test]
    fn endpoint_error_of_zero_net_is_mean_magnitude() {
        let clips = toy(2, 9);
        let net = FlowNet::new(small(Task::Interpolation, false).flow, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let epe = endpoint_error(&net, &clips).unwrap();
        let mut expect = 0.0;
        for c in &clips {
            for k in [0, 2] {
                expect += c.flows.as_ref().unwrap()[k].magnitudes().iter().sum::<f64>() / 256.0;
            }
        }
        assert!((epe - expect / 4.0).abs() < 1e-6);
    }
}
