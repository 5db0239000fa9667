//! Noise, salt-and-pepper, block-DCT compression and downsampling.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::synth::clamp_unit;
use super::{item_rng, VideoClip};
use crate::error::{Error, Result};
use crate::heads::bicubic_resize;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DegradationSpec {
    Gaussian { sigma: f64 },
    /// Gaussian noise, then each pixel set to black or white with probability `p`.
    Mixed { sigma: f64, p: f64 },
    /// Per-channel 8×8 DCT with AC coefficients quantized by `q` times the
    /// standard luminance table.
    Blocky { q: f64 },
    Downsample { k: usize },
}

impl DegradationSpec {
    pub fn gaussian() -> Self {
        DegradationSpec::Gaussian { sigma: 0.1 }
    }

    pub fn mixed() -> Self {
        DegradationSpec::Mixed { sigma: 0.1, p: 0.10 }
    }

    pub fn downsample() -> Self {
        DegradationSpec::Downsample { k: 4 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            DegradationSpec::Gaussian { sigma } => sigma >= 0.0 && sigma.is_finite(),
            DegradationSpec::Mixed { sigma, p } => sigma >= 0.0 && sigma.is_finite() && (0.0..=1.0).contains(&p),
            DegradationSpec::Blocky { q } => q > 0.0 && q.is_finite(),
            DegradationSpec::Downsample { k } => k >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid degradation {self:?}")))
        }
    }
}

const JPEG_LUMA: [[f64; 8]; 8] = [
    [16., 11., 10., 16., 24., 40., 51., 61.],
    [12., 12., 14., 19., 26., 58., 60., 55.],
    [14., 13., 16., 24., 40., 57., 69., 56.],
    [14., 17., 22., 29., 51., 87., 80., 62.],
    [18., 22., 37., 56., 68., 109., 103., 77.],
    [24., 35., 55., 64., 81., 104., 113., 92.],
    [49., 64., 78., 87., 103., 121., 120., 101.],
    [72., 92., 95., 98., 112., 100., 103., 99.],
];

/// Quantization steps on the `[0, 1]` scale; the DC step is 0 (unquantized).
pub fn dct8_quant_table(q: f64) -> [[f64; 8]; 8] {
    let mut t = [[0.0; 8]; 8];
    for u in 0..8 {
        for v in 0..8 {
            if (u, v) != (0, 0) {
                t[u][v] = q * JPEG_LUMA[u][v] / 255.0;
            }
        }
    }
    t
}

fn dct_basis() -> [[f64; 8]; 8] {
    let mut b = [[0.0; 8]; 8];
    for (k, row) in b.iter_mut().enumerate() {
        let c = if k == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
        for (n, v) in row.iter_mut().enumerate() {
            *v = c * ((2 * n + 1) as f64 * k as f64 * PI / 16.0).cos();
        }
    }
    b
}

fn blocky_plane(plane: &mut [f32], h: usize, w: usize, table: &[[f64; 8]; 8], basis: &[[f64; 8]; 8]) {
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            let mut blk = [[0.0f64; 8]; 8];
            for (y, row) in blk.iter_mut().enumerate() {
                for (x, v) in row.iter_mut().enumerate() {
                    let (sy, sx) = ((by + y).min(h - 1), (bx + x).min(w - 1));
                    *v = plane[sy * w + sx] as f64;
                }
            }
            let mut coef = [[0.0f64; 8]; 8];
            for u in 0..8 {
                for v in 0..8 {
                    let mut s = 0.0;
                    for y in 0..8 {
                        for x in 0..8 {
                            s += basis[u][y] * basis[v][x] * blk[y][x];
                        }
                    }
                    let step = table[u][v];
                    coef[u][v] = if step > 0.0 { (s / step).round() * step } else { s };
                }
            }
            for y in 0..8 {
                for x in 0..8 {
                    if by + y >= h || bx + x >= w {
                        continue;
                    }
                    let mut s = 0.0;
                    for u in 0..8 {
                        for v in 0..8 {
                            s += basis[u][y] * basis[v][x] * coef[u][v];
                        }
                    }
                    plane[(by + y) * w + bx + x] = s.clamp(0.0, 1.0) as f32;
                }
            }
        }
    }
}

fn degrade_frame(f: &Tensor<f32>, spec: &DegradationSpec, rng: &mut impl Rng) -> Result<Tensor<f32>> {
    let (c, h, w) = f.chw()?;
    let mut d = f.to_vec();
    let add_noise = |d: &mut [f32], sigma: f64, rng: &mut dyn rand::RngCore| {
        if sigma > 0.0 {
            let n = Normal::new(0.0, sigma).expect("valid sigma");
            for v in d.iter_mut() {
                *v = (*v as f64 + n.sample(rng)).clamp(0.0, 1.0) as f32;
            }
        }
    };
    match *spec {
        DegradationSpec::Gaussian { sigma } => add_noise(&mut d, sigma, rng),
        DegradationSpec::Mixed { sigma, p } => {
            add_noise(&mut d, sigma, rng);
            let plane = h * w;
            for k in 0..plane {
                if rng.random::<f64>() < p {
                    let v = if rng.random::<bool>() { 1.0 } else { 0.0 };
                    for ch in 0..c {
                        d[ch * plane + k] = v;
                    }
                }
            }
        }
        DegradationSpec::Blocky { q } => {
            let (table, basis) = (dct8_quant_table(q), dct_basis());
            for ch in 0..c {
                blocky_plane(&mut d[ch * h * w..(ch + 1) * h * w], h, w, &table, &basis);
            }
        }
        DegradationSpec::Downsample { k } => {
            return Ok(clamp_unit(bicubic_resize(f, 1.0 / k as f64)?));
        }
    }
    Tensor::from_vec(f.shape(), d)
}

/// Degrades every frame; the originals move to `clean`. Ground-truth flows
/// and masks stay at the original resolution.
pub fn degrade(clip: &VideoClip, spec: &DegradationSpec, seed: u64) -> Result<VideoClip> {
    spec.validate()?;
    let mut rng = item_rng(seed, clip.meta.index, 5);
    let frames = clip
        .frames
        .iter()
        .map(|f| degrade_frame(f, spec, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let mut out = clip.clone();
    out.clean = Some(clip.clean.clone().unwrap_or_else(|| clip.frames.clone()));
    out.frames = frames;
    out.meta.degradation = Some(*spec);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ClipMeta;

    fn clip(v: f32, n: usize) -> VideoClip {
        VideoClip::new("c", vec![Tensor::full(&[3, n, n], v); 3], ClipMeta::default()).unwrap()
    }

    #[test]
    fn zero_sigma_is_identity() {
        let c = clip(0.4, 8);
        let d = degrade(&c, &DegradationSpec::Gaussian { sigma: 0.0 }, 1).unwrap();
        assert_eq!(d.frames[0].to_vec(), c.frames[0].to_vec());
        assert_eq!(d.target().to_vec(), c.frames[1].to_vec());
    }

    #[test]
    fn gaussian_std_matches() {
        // 3 frames × 3 channels × 340² ≈ 1.04e6 samples
        let c = clip(0.5, 340);
        let d = degrade(&c, &DegradationSpec::gaussian(), 7).unwrap();
        let vals: Vec<f64> = d.frames.iter().flat_map(|f| f.to_vec()).map(|v| v as f64).collect();
        assert!(vals.len() >= 1_000_000);
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
        assert!((sd - 0.1).abs() < 0.005, "std {sd}");
    }

    #[test]
    fn mixed_noise_saturates_expected_fraction() {
        let c = clip(0.5, 200);
        let d = degrade(&c, &DegradationSpec::Mixed { sigma: 0.0, p: 0.1 }, 3).unwrap();
        let f = d.frames[0].to_vec();
        let sat = f.iter().filter(|v| **v == 0.0 || **v == 1.0).count() as f64 / f.len() as f64;
        assert!((sat - 0.1).abs() < 0.01, "{sat}");
    }

    #[test]
    fn blocky_keeps_constant_image() {
        let c = clip(0.37, 16);
        let d = degrade(&c, &DegradationSpec::Blocky { q: 4.0 }, 0).unwrap();
        for v in d.frames[0].data().iter() {
            assert!((v - 0.37).abs() < 1e-6);
        }
    }

    #[test]
    fn blocky_alters_detail_and_stays_in_range() {
        let n = 16;
        let f = Tensor::from_vec(&[3, n, n], (0..3 * n * n).map(|i| ((i * 7919) % 97) as f32 / 96.0).collect()).unwrap();
        let c = VideoClip::new("t", vec![f.clone(); 3], ClipMeta::default()).unwrap();
        let d = degrade(&c, &DegradationSpec::Blocky { q: 2.0 }, 0).unwrap();
        assert_ne!(d.frames[0].to_vec(), f.to_vec());
        assert!(d.frames[0].data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn downsample_factor_four() {
        let c = clip(0.2, 32);
        let d = degrade(&c, &DegradationSpec::downsample(), 0).unwrap();
        assert_eq!(d.frames[0].shape(), &[3, 8, 8]);
        assert_eq!(d.target().shape(), &[3, 32, 32]);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(DegradationSpec::Mixed { sigma: 0.1, p: 1.5 }.validate().is_err());
        assert!(DegradationSpec::Blocky { q: 0.0 }.validate().is_err());
        assert!(DegradationSpec::Downsample { k: 0 }.validate().is_err());
        assert!(DegradationSpec::Gaussian { sigma: -1.0 }.validate().is_err());
    }

    #[test]
    fn spec_json_is_tagged() {
        let s = serde_json::to_string(&DegradationSpec::mixed()).unwrap();
        assert_eq!(s, r#"{"kind":"mixed","sigma":0.1,"p":0.1}"#);
        assert!(serde_json::from_str::<DegradationSpec>(r#"{"kind":"gaussian","sigma":0.1,"x":1}"#).is_err());
    }

    #[test]
    fn degradations_stay_in_unit_range() {
        let n = 16;
        let f = Tensor::from_vec(&[3, n, n], (0..3 * n * n).map(|i| (i % 2) as f32).collect()).unwrap();
        let c = VideoClip::new("t", vec![f; 3], ClipMeta::default()).unwrap();
        for s in [DegradationSpec::gaussian(), DegradationSpec::mixed(), DegradationSpec::Blocky { q: 8.0 }, DegradationSpec::downsample()] {
            let d = degrade(&c, &s, 1).unwrap();
            assert!(d.frames.iter().all(|f| f.data().iter().all(|v| (0.0..=1.0).contains(v))), "{s:?}");
        }
    }
}
