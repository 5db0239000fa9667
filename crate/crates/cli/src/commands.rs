use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{CliError, Result, RunConfig, ToyKind};
use toflow::data::{
    self, filter_interp_triplet, filter_septuplet, flow_histogram, gen_boxnoise_toy, gen_flow_clips,
    gen_texture_clips, gen_triangle_toy, item_rng, read_corpus, write_corpus, FilterDecision, VideoClip,
};
use toflow::flownet::estimate_interp_flows;
use toflow::heads::Task;
use toflow::pipeline::{self, FlowModule, JointSample, LoadScope, ModelCheckpoint, TaskModel, TrainReport};
use toflow::warp::FlowField;

const CHECKPOINT_FILE: &str = "checkpoint.tofw";
const MANIFEST_FILE: &str = "manifest.json";

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    fs::write(path, bytes).map_err(CliError::io(path))
}

fn json_line<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string(v)? + "\n")
}

fn files_under(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(CliError::io(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .map_err(CliError::io(dir))?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            files_under(root, &p, out)?;
        } else {
            out.push(p.strip_prefix(root).expect("listed under root").to_path_buf());
        }
    }
    Ok(())
}

/// Writes the effective configuration and a manifest of content hashes
/// covering every file under the output directory.
fn finish(command: &str, cfg: &RunConfig) -> Result<()> {
    let out = cfg.out()?;
    write(&out.join("config.json"), serde_json::to_string_pretty(cfg)? + "\n")?;
    let mut files = Vec::new();
    files_under(out, out, &mut files)?;
    let mut hashes = serde_json::Map::new();
    for rel in files.iter().filter(|p| p.as_os_str() != MANIFEST_FILE) {
        let path = out.join(rel);
        let bytes = fs::read(&path).map_err(CliError::io(&path))?;
        let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        hashes.insert(key, hex::encode(Sha256::digest(&bytes)).into());
    }
    let manifest = json!({
        "command": command,
        "seed": cfg.model.seed,
        "config": cfg,
        "files": hashes,
    });
    write(&out.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")
}

fn corpus(cfg: &RunConfig, split: &str) -> Result<Vec<VideoClip>> {
    let clips = read_corpus(cfg.corpus()?, split)?;
    if clips.is_empty() {
        return Err(toflow::Error::Data(format!("split {split} of {} is empty", cfg.corpus()?.display())).into());
    }
    Ok(clips)
}

fn read_checkpoint(path: &Path) -> Result<ModelCheckpoint> {
    let bytes = fs::read(path).map_err(CliError::io(path))?;
    Ok(ModelCheckpoint::from_bytes(&bytes)?)
}

fn save_model(cfg: &RunConfig, model: &TaskModel, report: Option<&TrainReport>) -> Result<()> {
    let out = cfg.out()?;
    let opt = report.and_then(|r| r.optimizer.as_ref());
    write(&out.join(CHECKPOINT_FILE), model.to_checkpoint(opt)?.to_bytes()?)?;
    if let Some(r) = report {
        write(&out.join("log.jsonl"), r.to_json_lines()?)?;
    }
    Ok(())
}

fn new_model(cfg: &RunConfig) -> Result<TaskModel> {
    Ok(TaskModel::new(&cfg.model, &mut item_rng(cfg.model.seed, 0, 0))?)
}

/// A model restored from `cfg.checkpoint`; `task` must agree when given.
fn trained_model(cfg: &RunConfig, task: Option<Task>) -> Result<TaskModel> {
    let ck = read_checkpoint(cfg.checkpoint()?)?;
    let model = TaskModel::from_checkpoint(&ck)?;
    if let Some(t) = task {
        if t != model.task() {
            return Err(CliError::Config(format!(
                "task: {t} requested but the checkpoint holds a {} model",
                model.task()
            )));
        }
    }
    Ok(model)
}

pub fn gen_toy(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let out = cfg.out()?;
    let m = &cfg.model;
    let t = &cfg.toy;
    let kind = t.kind.unwrap_or(match m.task {
        Task::Interpolation => ToyKind::Triangle,
        Task::Denoising => ToyKind::Boxnoise,
        Task::SuperResolution => ToyKind::Texture,
    });
    let (count, seed, frames) = (t.count, m.seed, m.frames());
    let clips = match kind {
        ToyKind::Triangle => {
            let mut p = t.triangle.clone();
            (p.count, p.seed, p.frames) = (count, seed, frames);
            p.size = m.resolution.unwrap_or(p.size);
            gen_triangle_toy(&p)?
        }
        ToyKind::Boxnoise => {
            let mut p = t.boxnoise.clone();
            (p.scene.count, p.scene.seed, p.scene.frames) = (count, seed, frames);
            p.scene.size = m.resolution.unwrap_or(p.scene.size);
            gen_boxnoise_toy(&p)?
        }
        ToyKind::Texture => {
            let mut p = t.texture.clone();
            (p.count, p.seed, p.frames) = (count, seed, frames);
            p.size = m.resolution.unwrap_or(p.size);
            p.downsample = if m.task == Task::SuperResolution { m.sr_factor } else { 1 };
            gen_texture_clips(&p)?
        }
        ToyKind::Flow => {
            let mut p = t.flow.clone();
            (p.count, p.seed, p.frames) = (count, seed, frames);
            p.size = m.resolution.unwrap_or(p.size);
            gen_flow_clips(&p)?
        }
    };
    write_corpus(out, &cfg.split, &clips)?;
    finish("gen-toy", cfg)
}

pub fn degrade(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let spec = cfg
        .degradation
        .ok_or_else(|| CliError::Config("degradation: required by this command (set it or pass --kind)".into()))?;
    cfg.out()?;
    let clips = corpus(cfg, &cfg.split)?
        .iter()
        .map(|c| data::degrade(c, &spec, cfg.model.seed))
        .collect::<toflow::Result<Vec<_>>>()?;
    write_corpus(cfg.out()?, &cfg.split, &clips)?;
    finish("degrade", cfg)
}

/// Flows from the reference to every frame: estimated when a model is
/// given, ground truth otherwise.
fn clip_flows(model: Option<&TaskModel>, clip: &VideoClip) -> Result<Vec<FlowField>> {
    let Some(model) = model else {
        return clip.flows.clone().ok_or_else(|| {
            CliError::Config(format!("checkpoint: clip {} has no ground-truth flow, a flow checkpoint is required", clip.id))
        });
    };
    let frames = &clip.frames;
    let r = clip.reference;
    let (_, h, w) = frames[r].chw()?;
    let detach = |f: FlowField| FlowField::new(f.tensor().detach());
    match &model.flow {
        FlowModule::Pair { net21, net23 } => {
            if clip.len() != 3 {
                return Err(toflow::Error::Arity(format!("interpolation flows need 3 frames, {} has {}", clip.id, clip.len())).into());
            }
            let (v21, v23) = estimate_interp_flows(&frames[0], &frames[2], net21, net23)?;
            Ok(vec![detach(v21)?, FlowField::zeros(h, w), detach(v23)?])
        }
        FlowModule::Shared(net) => (0..clip.len())
            .map(|k| if k == r { Ok(FlowField::zeros(h, w)) } else { Ok(detach(net.estimate(&frames[r], &frames[k])?)?) })
            .collect(),
    }
}

fn optional_model(cfg: &RunConfig) -> Result<Option<TaskModel>> {
    match &cfg.checkpoint {
        Some(p) => Ok(Some(TaskModel::from_checkpoint(&read_checkpoint(p)?)?)),
        None => Ok(None),
    }
}

#[derive(Serialize)]
struct FilterLine<'a> {
    clip: &'a str,
    #[serde(flatten)]
    decision: &'a FilterDecision,
    /// Rule letter of the rejection.
    rule: Option<char>,
}

pub fn filter(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    cfg.out()?;
    let clips = corpus(cfg, &cfg.split)?;
    let model = optional_model(cfg)?;
    let mut lines = String::new();
    let mut accepted = 0;
    let mut rejected = std::collections::BTreeMap::<String, usize>::new();
    for c in &clips {
        let flows = clip_flows(model.as_ref(), c)?;
        let d = if c.len() == 3 { filter_interp_triplet(c, &flows)? } else { filter_septuplet(c, &flows)? };
        let rule = d.reason.map(|r| r.label());
        match rule {
            None => accepted += 1,
            Some(l) => *rejected.entry(l.to_string()).or_default() += 1,
        }
        lines.push_str(&json_line(&FilterLine { clip: &c.id, decision: &d, rule })?);
    }
    let out = cfg.out()?;
    write(&out.join("filter.jsonl"), lines)?;
    write(
        &out.join("summary.json"),
        serde_json::to_string_pretty(&json!({ "accepted": accepted, "rejected": rejected }))? + "\n",
    )?;
    finish("filter", cfg)
}

pub fn flow_stats(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    cfg.out()?;
    let clips = corpus(cfg, &cfg.split)?;
    let model = optional_model(cfg)?;
    let mut flows = Vec::new();
    for c in &clips {
        let f = clip_flows(model.as_ref(), c)?;
        flows.extend(f.into_iter().enumerate().filter(|(k, _)| *k != c.reference).map(|(_, f)| f));
    }
    let hist = flow_histogram(&flows);
    let report = json!({ "histogram": hist, "kept": hist.kept(), "images": flows.len() });
    write(&cfg.out()?.join("histogram.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    finish("flow-stats", cfg)
}

pub fn pretrain_flow(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    cfg.out()?;
    let clips = corpus(cfg, &cfg.split)?;
    let model = new_model(cfg)?;
    if let Some(p) = &cfg.checkpoint {
        model.load(&read_checkpoint(p)?, LoadScope::Flow)?;
    }
    let report = pipeline::pretrain_flow(&model, &clips, &cfg.model)?;
    save_model(cfg, &model, Some(&TrainReport { optimizer: None, ..report }))?;
    finish("pretrain-flow", cfg)
}

pub fn pretrain_mask(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    if !cfg.model.use_mask {
        return Err(CliError::Config("model.use_mask: must be true for mask pretraining".into()));
    }
    cfg.out()?;
    let ck = read_checkpoint(cfg.checkpoint()?)?;
    let clips = corpus(cfg, &cfg.split)?;
    let model = new_model(cfg)?;
    model.load(&ck, LoadScope::Flow)?;
    let report = pipeline::pretrain_mask(&model, &clips, &cfg.model)?;
    save_model(cfg, &model, Some(&TrainReport { optimizer: None, ..report }))?;
    finish("pretrain-mask", cfg)
}

fn samples(task: Task, clips: &[VideoClip]) -> Result<Vec<JointSample>> {
    Ok(clips.iter().map(|c| JointSample::from_clip(task, c)).collect::<toflow::Result<_>>()?)
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    cfg.out()?;
    let task = cfg.model.task;
    let train = samples(task, &corpus(cfg, &cfg.split)?)?;
    let val = match &cfg.validation_split {
        Some(s) => samples(task, &corpus(cfg, s)?)?,
        None => Vec::new(),
    };
    let model = new_model(cfg)?;
    if let Some(p) = &cfg.checkpoint {
        model.load(&read_checkpoint(p)?, LoadScope::Available)?;
    }
    let report = pipeline::train_joint(&model, &train, &val, &cfg.model)?;
    save_model(cfg, &model, Some(&report))?;
    finish("train", cfg)
}

pub fn infer(cfg: &RunConfig, task: Option<Task>) -> Result<()> {
    cfg.validate()?;
    cfg.out()?;
    let model = trained_model(cfg, task)?;
    let clips = corpus(cfg, &cfg.split)?;
    let outputs = clips
        .iter()
        .map(|c| pipeline::infer(&model, c))
        .collect::<toflow::Result<Vec<_>>>()?;
    let out = cfg.out()?;
    fs::create_dir_all(out).map_err(CliError::io(out))?;
    for (c, img) in clips.iter().zip(&outputs) {
        data::save_png(&out.join(format!("{}.png", c.id)), img)?;
    }
    finish("infer", cfg)
}

pub fn eval(cfg: &RunConfig, task: Option<Task>) -> Result<()> {
    cfg.validate()?;
    cfg.out()?;
    let model = trained_model(cfg, task)?;
    let clips = corpus(cfg, &cfg.split)?;
    let report = pipeline::evaluate(&model, &clips)?;
    let out = cfg.out()?;
    write(&out.join("metrics.jsonl"), report.to_json_lines()?)?;
    let summary = json!({ "mean_psnr": report.mean_psnr, "mean_ssim": report.mean_ssim, "count": report.count });
    write(&out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    finish("eval", cfg)
}
