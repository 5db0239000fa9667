//! Separable linear resampling: bilinear resize, binomial blur-and-subsample,
//! replicate padding and cropping all reduce to per-axis tap lists.

use super::{Backward, Scalar, Tensor};
use crate::error::{Error, Result};

/// Normalized binomial kernel used for Gaussian pyramids.
pub const BINOMIAL_5: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Linear map along one axis: output index `i` is `Σ w · input[j]` over
/// `taps[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisMap {
    pub in_len: usize,
    pub taps: Vec<Vec<(usize, f64)>>,
}

impl AxisMap {
    pub fn out_len(&self) -> usize {
        self.taps.len()
    }

    pub fn identity(n: usize) -> Self {
        AxisMap {
            in_len: n,
            taps: (0..n).map(|i| vec![(i, 1.0)]).collect(),
        }
    }

    /// Bilinear resampling with half-pixel centers; sample positions are
    /// clamped to `[0, in_len − 1]`.
    pub fn bilinear(in_len: usize, out_len: usize) -> Self {
        let ratio = in_len as f64 / out_len as f64;
        let last = in_len as f64 - 1.0;
        let taps = (0..out_len)
            .map(|i| {
                let src = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, last);
                let i0 = src.floor() as usize;
                let f = src - i0 as f64;
                let i1 = (i0 + 1).min(in_len - 1);
                if f == 0.0 || i1 == i0 {
                    vec![(i0, 1.0)]
                } else {
                    vec![(i0, 1.0 - f), (i1, f)]
                }
            })
            .collect();
        AxisMap { in_len, taps }
    }

    /// 5-tap binomial blur followed by keeping every other sample,
    /// replicating the border.
    pub fn blur_subsample(in_len: usize) -> Self {
        let out_len = in_len.div_ceil(2);
        let taps = (0..out_len)
            .map(|i| {
                let mut t: Vec<(usize, f64)> = Vec::with_capacity(5);
                for (k, w) in BINOMIAL_5.iter().enumerate() {
                    let j = (2 * i + k) as isize - 2;
                    let j = j.clamp(0, in_len as isize - 1) as usize;
                    match t.iter_mut().find(|(idx, _)| *idx == j) {
                        Some(entry) => entry.1 += w,
                        None => t.push((j, *w)),
                    }
                }
                t
            })
            .collect();
        AxisMap { in_len, taps }
    }

    pub fn replicate_pad(in_len: usize, before: usize, after: usize) -> Self {
        let taps = (0..in_len + before + after)
            .map(|i| vec![((i as isize - before as isize).clamp(0, in_len as isize - 1) as usize, 1.0)])
            .collect();
        AxisMap { in_len, taps }
    }

    pub fn window(in_len: usize, start: usize, len: usize) -> Self {
        AxisMap {
            in_len,
            taps: (start..start + len).map(|i| vec![(i, 1.0)]).collect(),
        }
    }
}

struct ResampleBack<T> {
    rows: Vec<Vec<(usize, T)>>,
    cols: Vec<Vec<(usize, T)>>,
    h: usize,
    w: usize,
}

fn convert<T: Scalar>(m: &AxisMap) -> Vec<Vec<(usize, T)>> {
    m.taps
        .iter()
        .map(|t| t.iter().map(|(i, w)| (*i, T::of(*w))).collect())
        .collect()
}

impl<T: Scalar> Backward<T> for ResampleBack<T> {
    fn backward(&self, inputs: &[Tensor<T>], out: &Tensor<T>, grad: &[T]) {
        let (c, oh, ow) = (out.shape()[0], self.rows.len(), self.cols.len());
        let (h, w) = (self.h, self.w);
        let mut dtmp = vec![T::zero(); c * h * ow];
        for ch in 0..c {
            for (oy, taps) in self.rows.iter().enumerate() {
                let g = &grad[(ch * oh + oy) * ow..][..ow];
                for &(iy, wy) in taps {
                    let d = &mut dtmp[(ch * h + iy) * ow..][..ow];
                    for (a, b) in d.iter_mut().zip(g) {
                        *a += wy * *b;
                    }
                }
            }
        }
        inputs[0].accumulate_grad(|dx| {
            for ch in 0..c {
                for y in 0..h {
                    let row = &dtmp[(ch * h + y) * ow..][..ow];
                    let d = &mut dx[(ch * h + y) * w..][..w];
                    for (ox, taps) in self.cols.iter().enumerate() {
                        for &(ix, wx) in taps {
                            d[ix] += wx * row[ox];
                        }
                    }
                }
            }
        });
    }
}

/// Applies `rows` along H and `cols` along W of a `C × H × W` tensor.
pub fn resample_separable<T: Scalar>(x: &Tensor<T>, rows: &AxisMap, cols: &AxisMap) -> Result<Tensor<T>> {
    let (c, h, w) = x.chw()?;
    if rows.in_len != h || cols.in_len != w {
        return Err(Error::Shape(format!(
            "resample maps expect {}×{}, input is {h}×{w}",
            rows.in_len, cols.in_len
        )));
    }
    let (oh, ow) = (rows.out_len(), cols.out_len());
    if oh == 0 || ow == 0 {
        return Err(Error::Config("resample to an empty extent".into()));
    }
    let rows_t = convert::<T>(rows);
    let cols_t = convert::<T>(cols);
    let xd = x.data();
    let mut tmp = vec![T::zero(); c * h * ow];
    for ch in 0..c {
        for y in 0..h {
            let src = &xd[(ch * h + y) * w..][..w];
            let dst = &mut tmp[(ch * h + y) * ow..][..ow];
            for (ox, taps) in cols_t.iter().enumerate() {
                let mut s = T::zero();
                for &(ix, wx) in taps {
                    s += wx * src[ix];
                }
                dst[ox] = s;
            }
        }
    }
    drop(xd);
    let mut out = vec![T::zero(); c * oh * ow];
    for ch in 0..c {
        for (oy, taps) in rows_t.iter().enumerate() {
            let dst = &mut out[(ch * oh + oy) * ow..][..ow];
            for &(iy, wy) in taps {
                let src = &tmp[(ch * h + iy) * ow..][..ow];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += wy * *s;
                }
            }
        }
    }
    Ok(Tensor::from_op(
        vec![c, oh, ow],
        out,
        "resample",
        vec![x.clone()],
        ResampleBack { rows: rows_t, cols: cols_t, h, w },
    ))
}

/// Bilinear resize by `scale`; output extents are `round(extent × scale)`.
pub fn resize_bilinear<T: Scalar>(x: &Tensor<T>, scale: f64) -> Result<Tensor<T>> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Config(format!("resize scale must be positive, got {scale}")));
    }
    let (_, h, w) = x.chw()?;
    let oh = (h as f64 * scale).round() as usize;
    let ow = (w as f64 * scale).round() as usize;
    resize_bilinear_to(x, oh, ow)
}

pub fn resize_bilinear_to<T: Scalar>(x: &Tensor<T>, oh: usize, ow: usize) -> Result<Tensor<T>> {
    let (_, h, w) = x.chw()?;
    if oh == 0 || ow == 0 {
        return Err(Error::Config(format!("resize of {h}×{w} to empty {oh}×{ow}")));
    }
    resample_separable(x, &AxisMap::bilinear(h, oh), &AxisMap::bilinear(w, ow))
}

/// One Gaussian-pyramid step: binomial blur, then 2× subsampling.
pub fn blur_downsample<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, h, w) = x.chw()?;
    resample_separable(x, &AxisMap::blur_subsample(h), &AxisMap::blur_subsample(w))
}

/// Edge-replicating pad: `(top, bottom, left, right)`.
pub fn pad_replicate<T: Scalar>(x: &Tensor<T>, pad: (usize, usize, usize, usize)) -> Result<Tensor<T>> {
    let (_, h, w) = x.chw()?;
    if pad == (0, 0, 0, 0) {
        return Ok(x.clone());
    }
    resample_separable(
        x,
        &AxisMap::replicate_pad(h, pad.0, pad.1),
        &AxisMap::replicate_pad(w, pad.2, pad.3),
    )
}

pub fn crop<T: Scalar>(x: &Tensor<T>, top: usize, left: usize, height: usize, width: usize) -> Result<Tensor<T>> {
    let (_, h, w) = x.chw()?;
    if top + height > h || left + width > w {
        return Err(Error::Shape(format!(
            "crop {height}×{width} at ({top},{left}) exceeds {h}×{w}"
        )));
    }
    if (top, left, height, width) == (0, 0, h, w) {
        return Ok(x.clone());
    }
    resample_separable(x, &AxisMap::window(h, top, height), &AxisMap::window(w, left, width))
}
