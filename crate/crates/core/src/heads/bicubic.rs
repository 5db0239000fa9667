//! Keys cubic resampling with an antialiasing prefilter on downscale and
//! symmetric border extension.

use crate::error::{Error, Result};
use crate::tensor::{resample_separable, AxisMap, Scalar, Tensor};

pub const KEYS_A: f64 = -0.5;

fn cubic(x: f64) -> f64 {
    let a = KEYS_A;
    let t = x.abs();
    if t <= 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

fn reflect(j: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = j.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Taps for resampling `in_len` samples to `out_len`.
pub fn cubic_axis(in_len: usize, out_len: usize) -> AxisMap {
    let scale = out_len as f64 / in_len as f64;
    let (stretch, width) = if scale < 1.0 { (scale, 4.0 / scale) } else { (1.0, 4.0) };
    let span = width.ceil() as isize + 2;
    let taps = (0..out_len)
        .map(|i| {
            let u = (i as f64 + 0.5) / scale - 0.5;
            let left = (u - width / 2.0).floor() as isize;
            let mut t: Vec<(usize, f64)> = Vec::with_capacity(span as usize);
            for j in left..left + span {
                let wgt = stretch * cubic(stretch * (u - j as f64));
                if wgt == 0.0 {
                    continue;
                }
                let idx = reflect(j, in_len);
                match t.iter_mut().find(|(k, _)| *k == idx) {
                    Some(e) => e.1 += wgt,
                    None => t.push((idx, wgt)),
                }
            }
            let total: f64 = t.iter().map(|(_, w)| w).sum();
            for e in &mut t {
                e.1 /= total;
            }
            t
        })
        .collect();
    AxisMap { in_len, taps }
}

/// Resizes by `factor`; output extents are `round(extent × factor)`.
pub fn bicubic_resize<T: Scalar>(frame: &Tensor<T>, factor: f64) -> Result<Tensor<T>> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(Error::Config(format!("bicubic factor must be positive, got {factor}")));
    }
    let (_, h, w) = frame.chw()?;
    bicubic_resize_to(frame, (h as f64 * factor).round() as usize, (w as f64 * factor).round() as usize)
}

pub fn bicubic_resize_to<T: Scalar>(frame: &Tensor<T>, oh: usize, ow: usize) -> Result<Tensor<T>> {
    let (_, h, w) = frame.chw()?;
    if oh == 0 || ow == 0 {
        return Err(Error::Config(format!("bicubic resize of {h}×{w} gives empty {oh}×{ow}")));
    }
    if (oh, ow) == (h, w) {
        return Ok(frame.clone());
    }
    resample_separable(frame, &cubic_axis(h, oh), &cubic_axis(w, ow))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::psnr;

    #[test]
    fn kernel_interpolates() {
        assert_eq!(cubic(0.0), 1.0);
        assert_eq!(cubic(1.0), 0.0);
        assert_eq!(cubic(2.0), 0.0);
        assert!((cubic(0.5) - 0.5625).abs() < 1e-15);
    }

    #[test]
    fn factor_one_is_identity() {
        let x = Tensor::<f64>::from_vec(&[1, 3, 5], (0..15).map(|v| v as f64 / 15.0).collect()).unwrap();
        let y = bicubic_resize(&x, 1.0).unwrap();
        for (a, b) in x.data().iter().zip(y.data().iter()) {
            assert!((a - b).abs() < 1e-6);
        }
        let m = cubic_axis(5, 5);
        for (i, t) in m.taps.iter().enumerate() {
            assert_eq!(t, &vec![(i, 1.0)]);
        }
    }

    #[test]
    fn constant_preserved_any_factor() {
        let x = Tensor::<f64>::full(&[3, 12, 8], 0.3);
        for f in [0.25, 0.5, 1.5, 2.0, 4.0] {
            let y = bicubic_resize(&x, f).unwrap();
            assert!(y.data().iter().all(|v| (v - 0.3).abs() < 1e-12), "factor {f}");
        }
    }

    #[test]
    fn smooth_image_survives_round_trip() {
        let n = 64;
        let d: Vec<f64> = (0..n * n)
            .map(|i| {
                let (y, x) = ((i / n) as f64 / n as f64, (i % n) as f64 / n as f64);
                0.5 + 0.2 * (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y * 0.5).cos() + 0.1 * x
            })
            .collect();
        let img = Tensor::from_vec(&[1, n, n], d).unwrap();
        let back = bicubic_resize(&bicubic_resize(&img, 0.25).unwrap(), 4.0).unwrap();
        let p = psnr(&img, &back).unwrap();
        assert!(p > 40.0, "round-trip psnr {p}");
    }

    #[test]
    fn degenerate_sizes_rejected() {
        let x = Tensor::<f32>::full(&[1, 2, 2], 1.0);
        assert!(bicubic_resize(&x, 0.1).is_err());
        assert!(bicubic_resize(&x, 0.0).is_err());
    }

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-3..7).map(|j| reflect(j, 4)).collect();
        assert_eq!(got, vec![2, 1, 0, 0, 1, 2, 3, 3, 2, 1]);
    }

    #[test]
    fn lr_to_hr_resolution() {
        let x = Tensor::<f32>::full(&[3, 64, 112], 0.5);
        assert_eq!(bicubic_resize(&x, 4.0).unwrap().shape(), &[3, 256, 448]);
    }
}
