//! Procedural corpora with exact ground-truth motion.

use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{item_rng, ClipMeta, VideoClip};
use crate::error::{Error, Result};
use crate::heads::bicubic_resize;
use crate::masknet::OcclusionMask;
use crate::tensor::Tensor;
use crate::warp::FlowField;

pub const SPRITE_COLOR: [f32; 3] = [0.1, 0.85, 0.15];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Background {
    Black,
    /// Static smooth random texture.
    Texture,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Wave {
    fx: f64,
    fy: f64,
    phase: f64,
    amp: [f64; 3],
}

/// Sum of random plane waves, defined on the continuous plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    base: [f64; 3],
    waves: Vec<Wave>,
}

impl Texture {
    /// `waves` components with spatial frequency in `freq` cycles per pixel,
    /// each with amplitude up to `contrast / sqrt(waves)` per channel.
    pub fn random(rng: &mut impl Rng, waves: usize, freq: (f64, f64), contrast: f64) -> Self {
        let base = [0; 3].map(|_| rng.random_range(0.35..0.65));
        let waves = (0..waves)
            .map(|_| {
                let f = rng.random_range(freq.0..freq.1);
                let theta = rng.random_range(0.0..TAU);
                Wave {
                    fx: f * theta.cos(),
                    fy: f * theta.sin(),
                    phase: rng.random_range(0.0..TAU),
                    amp: [0; 3].map(|_| rng.random_range(-1.0..1.0) * contrast / (waves as f64).sqrt()),
                }
            })
            .collect();
        Texture { base, waves }
    }

    pub fn eval(&self, x: f64, y: f64) -> [f64; 3] {
        let mut c = self.base;
        for w in &self.waves {
            let s = (TAU * (w.fx * x + w.fy * y) + w.phase).sin();
            for (ch, a) in c.iter_mut().zip(w.amp) {
                *ch += a * s;
            }
        }
        c.map(|v| v.clamp(0.0, 1.0))
    }

    /// `C × h × w` image sampled at pixel centers shifted by `offset`.
    pub fn render(&self, h: usize, w: usize, offset: (f64, f64)) -> Vec<f32> {
        let mut out = vec![0.0f32; 3 * h * w];
        for y in 0..h {
            for x in 0..w {
                let c = self.eval(x as f64 - offset.0, y as f64 - offset.1);
                for ch in 0..3 {
                    out[(ch * h + y) * w + x] = c[ch] as f32;
                }
            }
        }
        out
    }
}

const NOISE_PERIOD: usize = 64;

/// Smooth value noise: a periodic random lattice interpolated with cubic
/// B-splines, defined on the continuous plane. Broadband, unlike
/// [`Texture`], so local motion is unambiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTexture {
    cell: f64,
    lattice: Vec<[f64; 3]>,
    base: [f64; 3],
    gain: [f64; 3],
}

fn bspline_weights(t: f64) -> [f64; 4] {
    let (t2, t3) = (t * t, t * t * t);
    [
        (1.0 - t).powi(3) / 6.0,
        (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
        (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
        t3 / 6.0,
    ]
}

impl NoiseTexture {
    /// Lattice spacing `cell` pixels; per-channel standard deviation about
    /// `contrast` before clamping.
    pub fn random(rng: &mut impl Rng, cell: f64, contrast: f64) -> Self {
        let lattice = (0..NOISE_PERIOD * NOISE_PERIOD)
            .map(|_| [0; 3].map(|_| rng.random_range(-1.0..1.0)))
            .collect();
        let base = [0; 3].map(|_| rng.random_range(0.4..0.6));
        let mut tex = NoiseTexture {
            cell,
            lattice,
            base,
            gain: [1.0; 3],
        };
        let samples: Vec<[f64; 3]> = (0..NOISE_PERIOD * NOISE_PERIOD)
            .map(|k| tex.raw((k % NOISE_PERIOD) as f64 * cell, (k / NOISE_PERIOD) as f64 * cell))
            .collect();
        for ch in 0..3 {
            let n = samples.len() as f64;
            let mean = samples.iter().map(|s| s[ch]).sum::<f64>() / n;
            let var = samples.iter().map(|s| (s[ch] - mean).powi(2)).sum::<f64>() / n;
            tex.gain[ch] = contrast / var.sqrt().max(1e-12);
        }
        tex
    }

    fn raw(&self, x: f64, y: f64) -> [f64; 3] {
        let (gx, gy) = (x / self.cell, y / self.cell);
        let (ix, iy) = (gx.floor(), gy.floor());
        let (wx, wy) = (bspline_weights(gx - ix), bspline_weights(gy - iy));
        let wrap = |i: f64| (i as i64).rem_euclid(NOISE_PERIOD as i64) as usize;
        let mut out = [0.0; 3];
        for (j, wyj) in wy.iter().enumerate() {
            let row = wrap(iy + j as f64 - 1.0) * NOISE_PERIOD;
            for (i, wxi) in wx.iter().enumerate() {
                let v = &self.lattice[row + wrap(ix + i as f64 - 1.0)];
                for ch in 0..3 {
                    out[ch] += wyj * wxi * v[ch];
                }
            }
        }
        out
    }

    pub fn eval(&self, x: f64, y: f64) -> [f64; 3] {
        let r = self.raw(x, y);
        [0, 1, 2].map(|ch| (self.base[ch] + self.gain[ch] * r[ch]).clamp(0.0, 1.0))
    }

    /// `C × h × w` image sampled at pixel centers shifted by `offset`.
    pub fn render(&self, h: usize, w: usize, offset: (f64, f64)) -> Vec<f32> {
        let mut out = vec![0.0f32; 3 * h * w];
        for y in 0..h {
            for x in 0..w {
                let c = self.eval(x as f64 - offset.0, y as f64 - offset.1);
                for ch in 0..3 {
                    out[(ch * h + y) * w + x] = c[ch] as f32;
                }
            }
        }
        out
    }
}

/// Downward-pointing triangle with a flat top edge of `side` pixels.
#[derive(Debug, Clone, Copy)]
struct Triangle {
    side: usize,
}

impl Triangle {
    /// Whether pixel `(x, y)` relative to the sprite origin is covered.
    fn covers(&self, x: isize, y: isize) -> bool {
        let s = self.side as f64;
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        if py < 0.0 || py > s {
            return false;
        }
        let half = 0.5 * s * (1.0 - py / s);
        (px - 0.5 * s).abs() <= half
    }
}

fn sample_velocity(rng: &mut impl Rng, min: i32, max: i32) -> (i32, i32) {
    loop {
        let v = (rng.random_range(-max..=max), rng.random_range(-max..=max));
        let m = v.0.abs().max(v.1.abs());
        if m >= min && m <= max {
            return v;
        }
    }
}

/// Origin such that the sprite stays inside the frame at every time offset.
fn sample_origin(rng: &mut impl Rng, size: usize, side: usize, v: i32, r: i32) -> Result<i32> {
    let lo = (r * v.abs()) as i64;
    let hi = size as i64 - side as i64 - (r * v.abs()) as i64;
    if hi < lo {
        return Err(Error::Config(format!(
            "sprite of {side} px moving {v} px/frame does not fit a {size} px frame"
        )));
    }
    Ok(rng.random_range(lo..=hi) as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TriangleParams {
    pub size: usize,
    pub frames: usize,
    pub side: (usize, usize),
    /// Bounds on the larger velocity component, in pixels per frame.
    pub speed: (i32, i32),
    pub background: Background,
    pub count: usize,
    pub seed: u64,
}

impl Default for TriangleParams {
    fn default() -> Self {
        TriangleParams {
            size: 48,
            frames: 3,
            side: (12, 20),
            speed: (1, 8),
            background: Background::Black,
            count: 100,
            seed: 0,
        }
    }
}

impl TriangleParams {
    pub fn validate(&self) -> Result<()> {
        if self.frames % 2 == 0 {
            return Err(Error::Config(format!("clip length must be odd, got {}", self.frames)));
        }
        if self.speed.0 < 0 || self.speed.0 > self.speed.1 || self.speed.1 > 8 {
            return Err(Error::Config(format!("speed range {:?} must lie within 0..=8", self.speed)));
        }
        if self.side.0 < 2 || self.side.0 > self.side.1 {
            return Err(Error::Config(format!("invalid sprite size range {:?}", self.side)));
        }
        let span = self.side.1 + (self.frames - 1) * self.speed.1 as usize;
        if span > self.size {
            return Err(Error::Config(format!(
                "sprite up to {} px moving {} px/frame over {} frames exceeds the {} px frame",
                self.side.1, self.speed.1, self.frames, self.size
            )));
        }
        Ok(())
    }
}

struct SpriteScene {
    size: usize,
    tri: Triangle,
    origin: (i32, i32),
    velocity: (i32, i32),
    reference: usize,
    background: Vec<f32>,
}

impl SpriteScene {
    fn offset(&self, t: usize) -> i32 {
        t as i32 - self.reference as i32
    }

    fn covered(&self, t: usize, x: usize, y: usize) -> bool {
        let d = self.offset(t);
        let ox = self.origin.0 + d * self.velocity.0;
        let oy = self.origin.1 + d * self.velocity.1;
        self.tri.covers(x as isize - ox as isize, y as isize - oy as isize)
    }

    fn frame(&self, t: usize) -> Tensor<f32> {
        let n = self.size;
        let mut d = self.background.clone();
        for y in 0..n {
            for x in 0..n {
                if self.covered(t, x, y) {
                    for (ch, c) in SPRITE_COLOR.iter().enumerate() {
                        d[(ch * n + y) * n + x] = *c;
                    }
                }
            }
        }
        Tensor::from_vec(&[3, n, n], d).expect("frame shape")
    }

    fn flow(&self, t: usize) -> FlowField {
        let n = self.size;
        let d = self.offset(t);
        let mut f = vec![0.0f32; 2 * n * n];
        for y in 0..n {
            for x in 0..n {
                if self.covered(self.reference, x, y) {
                    f[y * n + x] = (d * self.velocity.0) as f32;
                    f[n * n + y * n + x] = (d * self.velocity.1) as f32;
                }
            }
        }
        FlowField::new(Tensor::from_vec(&[2, n, n], f).expect("flow shape")).expect("finite flow")
    }

    /// Background pixels of the reference that the sprite covers at `t`.
    fn mask(&self, t: usize) -> OcclusionMask {
        let n = self.size;
        let mut m = vec![1.0f32; n * n];
        for y in 0..n {
            for x in 0..n {
                if !self.covered(self.reference, x, y) && self.covered(t, x, y) {
                    m[y * n + x] = 0.0;
                }
            }
        }
        OcclusionMask::new(Tensor::from_vec(&[1, n, n], m).expect("mask shape")).expect("binary mask")
    }
}

fn sprite_clip(p: &TriangleParams, index: usize, generator: &str) -> Result<(VideoClip, SpriteScene)> {
    let mut rng = item_rng(p.seed, index, 1);
    let n = p.size;
    let side = rng.random_range(p.side.0..=p.side.1);
    let velocity = sample_velocity(&mut rng, p.speed.0, p.speed.1);
    let r = (p.frames / 2) as i32;
    let origin = (
        sample_origin(&mut rng, n, side, velocity.0, r)?,
        sample_origin(&mut rng, n, side, velocity.1, r)?,
    );
    let background = match p.background {
        Background::Black => vec![0.0; 3 * n * n],
        Background::Texture => Texture::random(&mut rng, 6, (0.02, 0.12), 0.35).render(n, n, (0.0, 0.0)),
    };
    let scene = SpriteScene {
        size: n,
        tri: Triangle { side },
        origin,
        velocity,
        reference: p.frames / 2,
        background,
    };
    let frames = (0..p.frames).map(|t| scene.frame(t)).collect();
    let meta = ClipMeta {
        generator: generator.into(),
        seed: p.seed,
        index,
        velocity: Some((velocity.0 as f64, velocity.1 as f64)),
        background_velocity: Some((0.0, 0.0)),
        degradation: None,
    };
    let mut clip = VideoClip::new(format!("{index:05}"), frames, meta)?;
    clip.flows = Some((0..p.frames).map(|t| scene.flow(t)).collect());
    clip.masks = Some((0..p.frames).map(|t| scene.mask(t)).collect());
    Ok((clip, scene))
}

/// Green triangle translating with integer velocity over a static
/// background, with exact flows and occlusion masks.
pub fn gen_triangle_toy(p: &TriangleParams) -> Result<Vec<VideoClip>> {
    p.validate()?;
    (0..p.count).map(|i| sprite_clip(p, i, "triangle").map(|(c, _)| c)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoxNoiseParams {
    pub scene: TriangleParams,
    /// Expected fraction of pixels covered by boxes in each frame.
    pub density: f64,
    pub box_size: usize,
}

impl Default for BoxNoiseParams {
    fn default() -> Self {
        BoxNoiseParams {
            scene: TriangleParams {
                size: 32,
                frames: 7,
                side: (8, 12),
                speed: (1, 3),
                background: Background::Texture,
                ..Default::default()
            },
            density: 0.1,
            box_size: 3,
        }
    }
}

/// Moving-sprite clips whose frames each carry independent random opaque
/// boxes; the clean frames are kept.
pub fn gen_boxnoise_toy(p: &BoxNoiseParams) -> Result<Vec<VideoClip>> {
    p.scene.validate()?;
    if !(0.0..1.0).contains(&p.density) || p.box_size == 0 {
        return Err(Error::Config(format!("box density {} / size {} invalid", p.density, p.box_size)));
    }
    let s = p.box_size;
    // a pixel is covered iff one of the s² box origins reaching it is seeded
    let q = 1.0 - (1.0 - p.density).powf(1.0 / (s * s) as f64);
    (0..p.scene.count)
        .map(|i| {
            let (mut clip, _) = sprite_clip(&p.scene, i, "boxnoise")?;
            let mut rng = item_rng(p.scene.seed, i, 2);
            let n = p.scene.size;
            let clean = clip.frames.clone();
            let noisy = clean
                .iter()
                .map(|f| {
                    let mut d = f.to_vec();
                    for oy in -(s as isize - 1)..n as isize {
                        for ox in -(s as isize - 1)..n as isize {
                            if rng.random::<f64>() >= q {
                                continue;
                            }
                            let color: [f32; 3] = [rng.random(), rng.random(), rng.random()];
                            for y in oy.max(0)..(oy + s as isize).min(n as isize) {
                                for x in ox.max(0)..(ox + s as isize).min(n as isize) {
                                    for (ch, c) in color.iter().enumerate() {
                                        d[(ch * n + y as usize) * n + x as usize] = *c;
                                    }
                                }
                            }
                        }
                    }
                    Tensor::from_vec(f.shape(), d)
                })
                .collect::<Result<Vec<_>>>()?;
            clip.frames = noisy;
            clip.clean = Some(clean);
            Ok(clip)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextureClipParams {
    /// High-resolution extent.
    pub size: usize,
    pub frames: usize,
    /// Bound on each velocity component, in high-resolution pixels per frame.
    pub max_speed: f64,
    /// Low-resolution clips are produced when greater than 1.
    pub downsample: usize,
    pub freq: (f64, f64),
    pub count: usize,
    pub seed: u64,
}

impl Default for TextureClipParams {
    fn default() -> Self {
        TextureClipParams {
            size: 32,
            frames: 7,
            max_speed: 2.0,
            downsample: 4,
            freq: (0.02, 0.2),
            count: 100,
            seed: 0,
        }
    }
}

/// Globally translating texture. With `downsample > 1` the frames are the
/// bicubic-downscaled clip and `clean` holds the original.
pub fn gen_texture_clips(p: &TextureClipParams) -> Result<Vec<VideoClip>> {
    if p.frames % 2 == 0 || p.downsample == 0 || p.size % p.downsample != 0 {
        return Err(Error::Config(format!(
            "texture clips need odd length and size divisible by the downsample factor, got {} / {} / {}",
            p.frames, p.size, p.downsample
        )));
    }
    let n = p.size;
    let r = p.frames / 2;
    (0..p.count)
        .map(|i| {
            let mut rng = item_rng(p.seed, i, 3);
            let tex = Texture::random(&mut rng, 8, p.freq, 0.45);
            let v = (
                rng.random_range(-p.max_speed..=p.max_speed),
                rng.random_range(-p.max_speed..=p.max_speed),
            );
            let hr: Vec<Tensor<f32>> = (0..p.frames)
                .map(|t| {
                    let d = (t as f64 - r as f64) as f64;
                    Tensor::from_vec(&[3, n, n], tex.render(n, n, (d * v.0, d * v.1)))
                })
                .collect::<Result<_>>()?;
            let flows = (0..p.frames)
                .map(|t| {
                    let d = t as f64 - r as f64;
                    FlowField::constant(n, n, d * v.0, d * v.1)
                })
                .collect();
            let masks = (0..p.frames)
                .map(|t| {
                    let d = t as f64 - r as f64;
                    let m = (0..n * n)
                        .map(|k| {
                            let (x, y) = ((k % n) as f64 + d * v.0, (k / n) as f64 + d * v.1);
                            let inside = x >= 0.0 && y >= 0.0 && x <= (n - 1) as f64 && y <= (n - 1) as f64;
                            if inside { 1.0 } else { 0.0 }
                        })
                        .collect();
                    OcclusionMask::new(Tensor::from_vec(&[1, n, n], m)?)
                })
                .collect::<Result<Vec<_>>>()?;
            let meta = ClipMeta {
                generator: "texture".into(),
                seed: p.seed,
                index: i,
                velocity: Some(v),
                background_velocity: Some(v),
                degradation: None,
            };
            let frames = if p.downsample > 1 {
                hr.iter()
                    .map(|f| bicubic_resize(f, 1.0 / p.downsample as f64).map(clamp_unit))
                    .collect::<Result<Vec<_>>>()?
            } else {
                hr.clone()
            };
            let mut clip = VideoClip::new(format!("{i:05}"), frames, meta)?;
            if p.downsample > 1 {
                clip.clean = Some(hr);
            }
            clip.flows = Some(flows);
            clip.masks = Some(masks);
            Ok(clip)
        })
        .collect()
}

pub(crate) fn clamp_unit(t: Tensor<f32>) -> Tensor<f32> {
    let d = t.to_vec().into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Tensor::from_vec(t.shape(), d).expect("same shape")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowClipParams {
    pub size: usize,
    pub frames: usize,
    /// Bound on each background velocity component.
    pub background_speed: f64,
    /// Bound on the larger sprite velocity component (integer pixels).
    pub sprite_speed: i32,
    pub side: (usize, usize),
    pub count: usize,
    pub seed: u64,
}

impl Default for FlowClipParams {
    fn default() -> Self {
        FlowClipParams {
            size: 32,
            frames: 3,
            background_speed: 3.0,
            sprite_speed: 4,
            side: (8, 14),
            count: 200,
            seed: 0,
        }
    }
}

const NOISE_CELL: f64 = 2.0;
const NOISE_CONTRAST: f64 = 0.2;

/// Flow-supervised clips: a translating noise-textured background with a
/// textured triangle moving independently in front of it.
pub fn gen_flow_clips(p: &FlowClipParams) -> Result<Vec<VideoClip>> {
    if p.frames % 2 == 0 {
        return Err(Error::Config(format!("clip length must be odd, got {}", p.frames)));
    }
    let n = p.size;
    let r = (p.frames / 2) as i32;
    if p.side.1 + 2 * (r as usize) * p.sprite_speed as usize > n {
        return Err(Error::Config(format!("sprite of up to {} px does not fit a {n} px frame", p.side.1)));
    }
    (0..p.count)
        .map(|i| {
            let mut rng = item_rng(p.seed, i, 4);
            let bg = NoiseTexture::random(&mut rng, NOISE_CELL, NOISE_CONTRAST);
            let fg = NoiseTexture::random(&mut rng, NOISE_CELL, NOISE_CONTRAST);
            let vb = (
                rng.random_range(-p.background_speed..=p.background_speed),
                rng.random_range(-p.background_speed..=p.background_speed),
            );
            let side = rng.random_range(p.side.0..=p.side.1);
            let vs = sample_velocity(&mut rng, 0, p.sprite_speed);
            let origin = (
                sample_origin(&mut rng, n, side, vs.0, r)?,
                sample_origin(&mut rng, n, side, vs.1, r)?,
            );
            let tri = Triangle { side };
            let sprite_at = |t: i32, x: usize, y: usize| -> Option<(isize, isize)> {
                let ox = (origin.0 + t * vs.0) as isize;
                let oy = (origin.1 + t * vs.1) as isize;
                let (lx, ly) = (x as isize - ox, y as isize - oy);
                tri.covers(lx, ly).then_some((lx, ly))
            };
            let mut frames = Vec::with_capacity(p.frames);
            let mut flows = Vec::with_capacity(p.frames);
            let mut masks = Vec::with_capacity(p.frames);
            for t in 0..p.frames as i32 {
                let d = (t - r) as f64;
                let mut img = bg.render(n, n, (d * vb.0, d * vb.1));
                let mut f = vec![0.0f32; 2 * n * n];
                let mut m = vec![1.0f32; n * n];
                for y in 0..n {
                    for x in 0..n {
                        let k = y * n + x;
                        if let Some((lx, ly)) = sprite_at(t - r, x, y) {
                            let c = fg.eval(lx as f64, ly as f64);
                            for ch in 0..3 {
                                img[ch * n * n + k] = c[ch] as f32;
                            }
                        }
                        let (fx, fy) = if sprite_at(0, x, y).is_some() {
                            (d * vs.0 as f64, d * vs.1 as f64)
                        } else {
                            let (fx, fy) = (d * vb.0, d * vb.1);
                            let (tx, ty) = (x as f64 + fx, y as f64 + fy);
                            let outside = tx < 0.0 || ty < 0.0 || tx > (n - 1) as f64 || ty > (n - 1) as f64;
                            let (rx, ry) = (tx.round().clamp(0.0, (n - 1) as f64), ty.round().clamp(0.0, (n - 1) as f64));
                            if outside || sprite_at(t - r, rx as usize, ry as usize).is_some() {
                                m[k] = 0.0;
                            }
                            (fx, fy)
                        };
                        f[k] = fx as f32;
                        f[n * n + k] = fy as f32;
                    }
                }
                frames.push(Tensor::from_vec(&[3, n, n], img)?);
                flows.push(FlowField::new(Tensor::from_vec(&[2, n, n], f)?)?);
                masks.push(OcclusionMask::new(Tensor::from_vec(&[1, n, n], m)?)?);
            }
            let meta = ClipMeta {
                generator: "flow".into(),
                seed: p.seed,
                index: i,
                velocity: Some((vs.0 as f64, vs.1 as f64)),
                background_velocity: Some(vb),
                degradation: None,
            };
            let mut clip = VideoClip::new(format!("{i:05}"), frames, meta)?;
            clip.flows = Some(flows);
            clip.masks = Some(masks);
            Ok(clip)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::warp::warp_tensor;

    fn triangle(count: usize, seed: u64) -> TriangleParams {
        TriangleParams { count, seed, ..Default::default() }
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let a = gen_triangle_toy(&triangle(5, 3)).unwrap();
        let b = gen_triangle_toy(&triangle(5, 3)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            for (f, g) in x.frames.iter().zip(&y.frames) {
                assert_eq!(f.to_vec(), g.to_vec());
            }
        }
        let c = gen_triangle_toy(&triangle(5, 4)).unwrap();
        assert_ne!(a[0].frames[0].to_vec(), c[0].frames[0].to_vec());
    }

    #[test]
    fn zero_velocity_gives_static_clip() {
        let p = TriangleParams { speed: (0, 0), count: 3, ..Default::default() };
        for c in gen_triangle_toy(&p).unwrap() {
            assert_eq!(c.frames[0].to_vec(), c.frames[1].to_vec());
            assert_eq!(c.frames[2].to_vec(), c.frames[1].to_vec());
        }
    }

    #[test]
    fn downward_velocity_flow_and_occlusion_band() {
        let scene = SpriteScene {
            size: 48,
            tri: Triangle { side: 16 },
            origin: (10, 12),
            velocity: (0, 4),
            reference: 1,
            background: vec![0.0; 3 * 48 * 48],
        };
        let v23 = scene.flow(2);
        let t = v23.tensor().data();
        for y in 0..48 {
            for x in 0..48 {
                let inside = scene.covered(1, x, y);
                let (u, v) = (t[y * 48 + x], t[48 * 48 + y * 48 + x]);
                if inside {
                    assert_eq!((u, v), (0.0, 4.0));
                } else {
                    assert_eq!((u, v), (0.0, 0.0));
                }
            }
        }
        // frame 1 held the triangle 4 px higher: the occluded band sits above
        // the reference triangle's flat top edge, exactly 4 px tall at the centre
        let m21 = scene.mask(0);
        let md = m21.tensor().data();
        let centre = 10 + 8;
        let column: Vec<usize> = (0..48).filter(|y| md[y * 48 + centre] == 0.0).collect();
        assert_eq!(column, vec![8, 9, 10, 11]);
        for y in 0..48 {
            for x in 0..48 {
                let expected = !scene.covered(1, x, y) && scene.covered(0, x, y);
                assert_eq!(md[y * 48 + x] == 0.0, expected);
            }
        }
    }

    #[test]
    fn ground_truth_flow_warps_exactly_on_visible_pixels() {
        let p = TriangleParams { background: Background::Texture, count: 4, ..Default::default() };
        for c in gen_triangle_toy(&p).unwrap() {
            let r = c.reference;
            for t in [0, 2] {
                let w = warp_tensor(&c.frames[t], c.flow(t).unwrap().tensor()).unwrap();
                let m = c.masks.as_ref().unwrap()[t].tensor().to_vec();
                let (wd, rd) = (w.data(), c.frames[r].data());
                let p = 48 * 48;
                for k in 0..3 * p {
                    if m[k % p] == 1.0 {
                        assert_eq!(wd[k], rd[k], "clip {} frame {t}", c.id);
                    }
                }
            }
        }
    }

    #[test]
    fn flow_clips_warp_exactly_on_visible_pixels() {
        let p = FlowClipParams { count: 6, background_speed: 0.0, ..Default::default() };
        for c in gen_flow_clips(&p).unwrap() {
            for t in [0, 2] {
                let w = warp_tensor(&c.frames[t], c.flow(t).unwrap().tensor()).unwrap();
                let m = c.masks.as_ref().unwrap()[t].tensor().to_vec();
                let (wd, rd) = (w.data(), c.frames[1].data());
                for k in 0..3 * 1024 {
                    if m[k % 1024] == 1.0 {
                        assert!((wd[k] - rd[k]).abs() < 1e-5);
                    }
                }
            }
        }
    }

    #[test]
    fn texture_translation_matches_flow() {
        let p = TextureClipParams { downsample: 1, count: 3, ..Default::default() };
        for c in gen_texture_clips(&p).unwrap() {
            let w = warp_tensor(&c.frames[4], c.flow(4).unwrap().tensor()).unwrap();
            let m = c.masks.as_ref().unwrap()[4].tensor().to_vec();
            let mut err = 0.0f64;
            let mut cnt = 0;
            for (k, (a, b)) in w.data().iter().zip(c.frames[3].data().iter()).enumerate() {
                if m[k % 1024] == 1.0 {
                    err += (a - b).abs() as f64;
                    cnt += 1;
                }
            }
            // bilinear sampling of a smooth texture: small interpolation error only
            assert!(err / (cnt as f64) < 0.02, "{}", err / cnt as f64);
        }
    }

    #[test]
    fn sr_clips_are_low_resolution() {
        let c = &gen_texture_clips(&TextureClipParams { count: 1, ..Default::default() }).unwrap()[0];
        assert_eq!(c.frames[0].shape(), &[3, 8, 8]);
        assert_eq!(c.target().shape(), &[3, 32, 32]);
    }

    #[test]
    fn oversized_sprite_rejected() {
        let p = TriangleParams { size: 20, side: (16, 18), speed: (4, 8), ..Default::default() };
        assert!(gen_triangle_toy(&p).is_err());
    }

    #[test]
    fn zero_density_boxes_leave_clean_frames() {
        let p = BoxNoiseParams { density: 0.0, scene: TriangleParams { count: 3, ..BoxNoiseParams::default().scene }, ..Default::default() };
        for c in gen_boxnoise_toy(&p).unwrap() {
            for (f, g) in c.frames.iter().zip(c.clean.as_ref().unwrap()) {
                assert_eq!(f.to_vec(), g.to_vec());
            }
        }
    }

    #[test]
    fn box_density_matches_monte_carlo() {
        let density = 0.1;
        let p = BoxNoiseParams {
            density,
            scene: TriangleParams { count: 100, seed: 9, ..BoxNoiseParams::default().scene },
            ..Default::default()
        };
        let clips = gen_boxnoise_toy(&p).unwrap();
        let (mut hit, mut total) = (0usize, 0usize);
        for c in &clips {
            for (f, g) in c.frames.iter().zip(c.clean.as_ref().unwrap()) {
                let (fd, gd) = (f.data(), g.data());
                let px = fd.len() / 3;
                for k in 0..px {
                    total += 1;
                    if (0..3).any(|ch| fd[ch * px + k] != gd[ch * px + k]) {
                        hit += 1;
                    }
                }
            }
        }
        let frac = hit as f64 / total as f64;
        assert!((frac - density).abs() < 0.01, "corrupted fraction {frac}");
    }
}
