//! Image quality metrics on `[0, 1]` intensities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Rec. 601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("metric inputs differ: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Mean squared error over all channels jointly.
pub fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape(a, b)?;
    let (ad, bd) = (a.data(), b.data());
    let s: f64 = ad.iter().zip(bd.iter()).map(|(x, y)| (x.f64() - y.f64()).powi(2)).sum();
    Ok(s / ad.len() as f64)
}

/// `10 · log10(1 / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((-10.0 * m.log10()).min(PSNR_CAP))
}

/// Single-channel plane: luma for RGB, the channel itself for grayscale.
pub fn luma<T: Scalar>(x: &Tensor<T>) -> Result<Vec<f64>> {
    let (c, h, w) = x.chw()?;
    let d = x.data();
    let p = h * w;
    match c {
        1 => Ok(d.iter().map(|v| v.f64()).collect()),
        3 => Ok((0..p)
            .map(|i| LUMA[0] * d[i].f64() + LUMA[1] * d[p + i].f64() + LUMA[2] * d[2 * p + i].f64())
            .collect()),
        _ => Err(Error::Shape(format!("luma needs 1 or 3 channels, got {c}"))),
    }
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of an `h × w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for ox in 0..ow {
            tmp[y * ow + ox] = (0..n).map(|j| k[j] * x[y * w + ox + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            out[oy * ow + ox] = (0..n).map(|j| k[j] * tmp[(oy + j) * ow + ox]).sum();
        }
    }
    out
}

/// Mean windowed SSIM on luma over valid window positions.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape(a, b)?;
    let (_, h, w) = a.chw()?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!("SSIM needs at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {h}×{w}")));
    }
    let (x, y) = (luma(a)?, luma(b)?);
    let k = gaussian_window();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let [mx, my, sxx, syy, sxy] = [&x, &y, &xx, &yy, &xy].map(|p| filter_valid(p, h, w, &k));
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ma, mb) = (mx[i], my[i]);
            let va = sxx[i] - ma * ma;
            let vb = syy[i] - mb * mb;
            let cov = sxy[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMetrics {
    pub clip: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub clips: Vec<ClipMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub count: usize,
}

impl MetricReport {
    /// Means are accumulated in the given clip order.
    pub fn from_clips(clips: Vec<ClipMetrics>) -> Self {
        let n = clips.len();
        let (sp, ss) = clips.iter().fold((0.0, 0.0), |(p, s), c| (p + c.psnr, s + c.ssim));
        let denom = n.max(1) as f64;
        MetricReport {
            mean_psnr: sp / denom,
            mean_ssim: ss / denom,
            count: n,
            clips,
        }
    }

    /// One JSON object per clip.
    pub fn to_json_lines(&self) -> Result<String> {
        let mut s = String::new();
        for c in &self.clips {
            s.push_str(&serde_json::to_string(c)?);
            s.push('\n');
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn constant(v: f64, c: usize, n: usize) -> Tensor<f64> {
        Tensor::full(&[c, n, n], v)
    }

    #[test]
    fn psnr_cases() {
        let a = constant(0.3, 3, 8);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        assert!((psnr(&constant(0.0, 3, 8), &constant(1.0, 3, 8)).unwrap() - 0.0).abs() < 1e-9);
        assert!((psnr(&constant(0.5, 3, 8), &constant(0.6, 3, 8)).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&a, &constant(0.3, 3, 7)).is_err());
    }

    #[test]
    fn ssim_identical_is_one() {
        let d: Vec<f64> = (0..3 * 16 * 16).map(|i| ((i * 37) % 101) as f64 / 100.0).collect();
        let a = Tensor::from_vec(&[3, 16, 16], d).unwrap();
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn ssim_two_constants_closed_form() {
        let (p, q) = (0.5, 0.6);
        let c1 = 0.01f64.powi(2);
        let expected = (2.0 * p * q + c1) / (p * p + q * q + c1);
        let got = ssim(&constant(p, 3, 16), &constant(q, 3, 16)).unwrap();
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    }

    #[test]
    fn ssim_rejects_small_images() {
        assert!(ssim(&constant(0.5, 1, 10), &constant(0.5, 1, 10)).is_err());
    }

    #[test]
    fn window_is_normalized() {
        let g = gaussian_window();
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(g[5] > g[4] && g[4] == g[6]);
    }

    #[test]
    fn report_means_and_lines() {
        let r = MetricReport::from_clips(vec![
            ClipMetrics { clip: "a".into(), psnr: 30.0, ssim: 0.9 },
            ClipMetrics { clip: "b".into(), psnr: 20.0, ssim: 0.7 },
        ]);
        assert_eq!(r.count, 2);
        assert!((r.mean_psnr - 25.0).abs() < 1e-12);
        assert_eq!(r.to_json_lines().unwrap().lines().count(), 2);
    }

    fn image(vals: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[1, 12, 12], vals.to_vec()).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn metrics_symmetric(a in proptest::collection::vec(0.0f64..1.0, 144), b in proptest::collection::vec(0.0f64..1.0, 144)) {
            let (x, y) = (image(&a), image(&b));
            prop_assert_eq!(psnr(&x, &y).unwrap(), psnr(&y, &x).unwrap());
            let (s1, s2) = (ssim(&x, &y).unwrap(), ssim(&y, &x).unwrap());
            prop_assert!((s1 - s2).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&s1));
        }

        #[test]
        fn psnr_decreases_with_offset(base in 0.0f64..0.4, d1 in 0.01f64..0.3, extra in 0.01f64..0.3) {
            let a = constant(base, 1, 4);
            let p1 = psnr(&a, &constant(base + d1, 1, 4)).unwrap();
            let p2 = psnr(&a, &constant(base + d1 + extra, 1, 4)).unwrap();
            prop_assert!(p2 < p1);
        }
    }
}
