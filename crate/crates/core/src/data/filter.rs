//! Clip selection rules, shot detection and flow statistics.

use serde::{Deserialize, Serialize};

use super::VideoClip;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::warp::{warp_tensor, FlowField};

/// Displacement (px) a pixel must exceed to count as moving.
pub const MOTION_THRESHOLD: f64 = 3.0;
/// Fraction of moving pixels a clip must exceed.
pub const MIN_MOTION_FRACTION: f64 = 0.05;
/// Largest mean absolute warp residual, 15 levels on the 8-bit scale.
pub const RESIDUAL_LIMIT: f64 = 15.0 / 255.0;
/// Largest mean `|v21 + v23|` for motion to count as linear.
pub const LINEARITY_LIMIT: f64 = 1.0;
pub const HISTOGRAM_BIN: f64 = 0.25;
/// Accepted range of mean motion magnitude per image.
pub const KEEP_RANGE: (f64, f64) = (1.0, 8.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterReason {
    /// (a) too few pixels move more than the motion threshold.
    InsufficientMotion,
    /// (b) warping leaves too large a residual.
    WarpResidual,
    /// (c) the two flows are not opposite.
    NonlinearMotion,
}

impl FilterReason {
    pub fn label(self) -> char {
        match self {
            FilterReason::InsufficientMotion => 'a',
            FilterReason::WarpResidual => 'b',
            FilterReason::NonlinearMotion => 'c',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub accepted: bool,
    pub reason: Option<FilterReason>,
    pub moving_fraction: f64,
    pub max_residual: f64,
    pub linearity: Option<f64>,
}

fn moving_fraction(flows: &[&FlowField]) -> f64 {
    let mags: Vec<Vec<f64>> = flows.iter().map(|f| f.magnitudes()).collect();
    let p = mags[0].len();
    let moving = (0..p)
        .filter(|&i| mags.iter().map(|m| m[i]).fold(0.0, f64::max) > MOTION_THRESHOLD)
        .count();
    moving as f64 / p as f64
}

fn warp_residual(reference: &Tensor<f32>, frame: &Tensor<f32>, flow: &FlowField) -> Result<f64> {
    let w = warp_tensor(frame, flow.tensor())?;
    let (wd, rd) = (w.data(), reference.data());
    Ok(wd.iter().zip(rd.iter()).map(|(a, b)| (a - b).abs() as f64).sum::<f64>() / wd.len() as f64)
}

fn check_frames(clip: &VideoClip, flows: &[FlowField]) -> Result<()> {
    if flows.len() != clip.len() {
        return Err(Error::Arity(format!("{} flows for a {}-frame clip", flows.len(), clip.len())));
    }
    Ok(())
}

fn motion_and_residual(clip: &VideoClip, flows: &[FlowField]) -> Result<(f64, f64)> {
    check_frames(clip, flows)?;
    let r = clip.reference;
    let others: Vec<usize> = (0..clip.len()).filter(|&k| k != r).collect();
    let frac = moving_fraction(&others.iter().map(|&k| &flows[k]).collect::<Vec<_>>());
    let mut worst = 0.0f64;
    for &k in &others {
        worst = worst.max(warp_residual(&clip.frames[r], &clip.frames[k], &flows[k])?);
    }
    Ok((frac, worst))
}

fn decide(frac: f64, residual: f64, linearity: Option<f64>) -> FilterDecision {
    let reason = if frac <= MIN_MOTION_FRACTION {
        Some(FilterReason::InsufficientMotion)
    } else if residual > RESIDUAL_LIMIT {
        Some(FilterReason::WarpResidual)
    } else if linearity.is_some_and(|l| l >= LINEARITY_LIMIT) {
        Some(FilterReason::NonlinearMotion)
    } else {
        None
    };
    FilterDecision {
        accepted: reason.is_none(),
        reason,
        moving_fraction: frac,
        max_residual: residual,
        linearity,
    }
}

/// Motion, residual and linearity rules for a triplet; `flows` holds the
/// flow from the middle frame to each frame.
pub fn filter_interp_triplet(clip: &VideoClip, flows: &[FlowField]) -> Result<FilterDecision> {
    if clip.len() != 3 {
        return Err(Error::Arity(format!("triplet filter given {} frames", clip.len())));
    }
    let (frac, residual) = motion_and_residual(clip, flows)?;
    let (a, b) = (flows[0].tensor().data(), flows[2].tensor().data());
    let p = a.len() / 2;
    let lin = (0..p)
        .map(|i| {
            let du = (a[i] + b[i]) as f64;
            let dv = (a[p + i] + b[p + i]) as f64;
            (du * du + dv * dv).sqrt()
        })
        .sum::<f64>()
        / p as f64;
    Ok(decide(frac, residual, Some(lin)))
}

/// Motion and residual rules only.
pub fn filter_septuplet(clip: &VideoClip, flows: &[FlowField]) -> Result<FilterDecision> {
    let (frac, residual) = motion_and_residual(clip, flows)?;
    Ok(decide(frac, residual, None))
}

/// Indices `i` such that a shot starts at frame `i`.
pub fn shot_detect(frames: &[Tensor<f32>], threshold: f64) -> Result<Vec<usize>> {
    if frames.len() < 2 {
        return Err(Error::Data(format!("shot detection needs at least 2 frames, got {}", frames.len())));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Config(format!("shot threshold must lie in (0, 1], got {threshold}")));
    }
    let mut cuts = Vec::new();
    for i in 1..frames.len() {
        let (a, b) = (frames[i - 1].data(), frames[i].data());
        if a.len() != b.len() {
            return Err(Error::Shape(format!("frame {i} differs in shape from frame {}", i - 1)));
        }
        let d = a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs() as f64).sum::<f64>() / a.len() as f64;
        if d > threshold {
            cuts.push(i);
        }
    }
    Ok(cuts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowHistogram {
    pub bin_width: f64,
    /// Pixel counts per magnitude bin `[k·w, (k+1)·w)`.
    pub pixels: Vec<u64>,
    /// Image counts per bin of mean magnitude.
    pub images: Vec<u64>,
    pub image_means: Vec<f64>,
}

impl FlowHistogram {
    pub fn in_keep_range(mean: f64) -> bool {
        mean >= KEEP_RANGE.0 && mean <= KEEP_RANGE.1
    }

    pub fn kept(&self) -> usize {
        self.image_means.iter().filter(|m| Self::in_keep_range(**m)).count()
    }
}

fn bump(hist: &mut Vec<u64>, v: f64) {
    let k = (v / HISTOGRAM_BIN).floor() as usize;
    if hist.len() <= k {
        hist.resize(k + 1, 0);
    }
    hist[k] += 1;
}

pub fn flow_histogram(flows: &[FlowField]) -> FlowHistogram {
    let mut pixels = Vec::new();
    let mut images = Vec::new();
    let mut image_means = Vec::with_capacity(flows.len());
    for f in flows {
        let m = f.magnitudes();
        for v in &m {
            bump(&mut pixels, *v);
        }
        let mean = m.iter().sum::<f64>() / m.len().max(1) as f64;
        bump(&mut images, mean);
        image_means.push(mean);
    }
    FlowHistogram {
        bin_width: HISTOGRAM_BIN,
        pixels,
        images,
        image_means,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_texture_clips, gen_triangle_toy, ClipMeta, TextureClipParams, TriangleParams};

    fn static_clip() -> (VideoClip, Vec<FlowField>) {
        let f = Tensor::full(&[3, 16, 16], 0.4f32);
        let c = VideoClip::new("s", vec![f; 3], ClipMeta::default()).unwrap();
        (c, vec![FlowField::zeros(16, 16); 3])
    }

    #[test]
    fn static_clip_rejected_for_motion() {
        let (c, f) = static_clip();
        let d = filter_interp_triplet(&c, &f).unwrap();
        assert_eq!(d.reason, Some(FilterReason::InsufficientMotion));
        assert!(!filter_septuplet(&c, &f).unwrap().accepted);
    }

    #[test]
    fn moving_triangle_accepted() {
        let p = TriangleParams { size: 32, side: (14, 14), speed: (4, 4), count: 20, ..Default::default() };
        let clips = gen_triangle_toy(&p).unwrap();
        let c = clips
            .iter()
            .find(|c| c.meta.velocity.is_some_and(|v| v.0 == 0.0 || v.1 == 0.0))
            .expect("axis-aligned clip");
        let flows = c.flows.clone().unwrap();
        let d = filter_interp_triplet(c, &flows).unwrap();
        assert!(d.accepted, "{d:?}");
        assert!(filter_septuplet(c, &flows).unwrap().accepted);
    }

    #[test]
    fn brightness_jump_rejected_for_residual() {
        let n = 16;
        let flows = vec![FlowField::constant(n, n, 4.0, 0.0), FlowField::zeros(n, n), FlowField::constant(n, n, -4.0, 0.0)];
        let f = Tensor::full(&[3, n, n], 0.4f32);
        let g = Tensor::full(&[3, n, n], 0.4f32 + 30.0 / 255.0);
        let c = VideoClip::new("j", vec![f.clone(), f, g], ClipMeta::default()).unwrap();
        let d = filter_interp_triplet(&c, &flows).unwrap();
        assert_eq!(d.reason, Some(FilterReason::WarpResidual));
        assert!((d.max_residual - 30.0 / 255.0).abs() < 1e-6);
    }

    #[test]
    fn nonlinear_motion_rejected() {
        let n = 16;
        let flows = vec![FlowField::constant(n, n, 4.0, 0.0), FlowField::zeros(n, n), FlowField::constant(n, n, 4.0, 0.0)];
        let f = Tensor::full(&[3, n, n], 0.4f32);
        let c = VideoClip::new("n", vec![f; 3], ClipMeta::default()).unwrap();
        let d = filter_interp_triplet(&c, &flows).unwrap();
        assert_eq!(d.reason, Some(FilterReason::NonlinearMotion));
        assert!(filter_septuplet(&c, &flows).unwrap().accepted);
    }

    #[test]
    fn shot_detection_cases() {
        let a = Tensor::full(&[1, 4, 4], 0.1f32);
        let b = Tensor::full(&[1, 4, 4], 0.9f32);
        assert!(shot_detect(&[a.clone(), a.clone(), a.clone()], 0.3).unwrap().is_empty());
        assert_eq!(shot_detect(&[a.clone(), a.clone(), b.clone(), b.clone()], 0.3).unwrap(), vec![2]);
        let fade: Vec<Tensor<f32>> = (0..=16).map(|i| Tensor::full(&[1, 4, 4], 0.1 + 0.05 * i as f32)).collect();
        assert!(shot_detect(&fade, 0.3).unwrap().is_empty());
        assert!(shot_detect(&[a.clone()], 0.3).is_err());
        assert!(shot_detect(&[a.clone(), b], 0.0).is_err());
    }

    #[test]
    fn histogram_cases() {
        let h = flow_histogram(&[FlowField::zeros(4, 4)]);
        assert_eq!(h.pixels, vec![16]);
        let h = flow_histogram(&[FlowField::constant(4, 4, 3.0, 4.0)]);
        assert_eq!(h.pixels.iter().sum::<u64>(), 16);
        assert_eq!(h.pixels[20], 16);
        assert_eq!(h.image_means, vec![5.0]);
        assert_eq!(h.kept(), 1);
    }

    #[test]
    fn filtered_corpus_means_in_range() {
        let p = TextureClipParams { downsample: 1, max_speed: 9.0, count: 60, ..Default::default() };
        let flows: Vec<FlowField> = gen_texture_clips(&p).unwrap().into_iter().map(|c| c.flows.unwrap()[4].clone()).collect();
        let h = flow_histogram(&flows);
        assert_eq!(h.images.iter().sum::<u64>(), 60);
        let kept: Vec<f64> = h.image_means.iter().copied().filter(|m| FlowHistogram::in_keep_range(*m)).collect();
        assert!(!kept.is_empty() && kept.len() < 60);
        assert!(kept.iter().all(|m| (1.0..=8.0).contains(m)));
    }
}
