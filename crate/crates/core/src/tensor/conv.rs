//! 2-D convolution (cross-correlation, stride 1) via im2col + GEMM.

use std::borrow::Cow;

use super::gemm::MatRef;
use super::{Backward, Scalar, Tensor};
use crate::error::{Error, Result};

/// Zero padding applied on each side of the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// `(k − 1) / 2` on each side; requires odd kernels.
    Same,
    Explicit { h: usize, w: usize },
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ph: usize,
    pw: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// 1×1 kernel without padding: the input already is the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.ph == 0 && self.pw == 0
    }

    /// Range of output x for which `x + j − pw` lands inside the input.
    fn x_range(&self, j: usize) -> (usize, usize) {
        let lo = self.pw.saturating_sub(j);
        let hi = (self.w + self.pw).saturating_sub(j).min(self.ow);
        (lo, hi.max(lo))
    }
}

fn im2col<T: Scalar>(g: &Geometry, input: &[T]) -> Vec<T> {
    let p = g.cols();
    let mut cols = vec![T::zero(); g.rows() * p];
    for c in 0..g.c {
        let plane = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = &mut cols[((c * g.kh + i) * g.kw + j) * p..][..p];
                let (x0, x1) = g.x_range(j);
                if x0 >= x1 {
                    continue;
                }
                for y in 0..g.oh {
                    let sy = y + i;
                    if sy < g.ph || sy - g.ph >= g.h {
                        continue;
                    }
                    let src = &plane[(sy - g.ph) * g.w..][..g.w];
                    let sx0 = x0 + j - g.pw;
                    row[y * g.ow + x0..y * g.ow + x1].copy_from_slice(&src[sx0..sx0 + (x1 - x0)]);
                }
            }
        }
    }
    cols
}

fn col2im_add<T: Scalar>(g: &Geometry, cols: &[T], dinput: &mut [T]) {
    let p = g.cols();
    for c in 0..g.c {
        let plane = &mut dinput[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = &cols[((c * g.kh + i) * g.kw + j) * p..][..p];
                let (x0, x1) = g.x_range(j);
                if x0 >= x1 {
                    continue;
                }
                for y in 0..g.oh {
                    let sy = y + i;
                    if sy < g.ph || sy - g.ph >= g.h {
                        continue;
                    }
                    let dst = &mut plane[(sy - g.ph) * g.w..][..g.w];
                    let sx0 = x0 + j - g.pw;
                    for (d, s) in dst[sx0..sx0 + (x1 - x0)]
                        .iter_mut()
                        .zip(&row[y * g.ow + x0..y * g.ow + x1])
                    {
                        *d += *s;
                    }
                }
            }
        }
    }
}

struct ConvBack {
    geom: Geometry,
    out_channels: usize,
}

impl<T: Scalar> Backward<T> for ConvBack {
    fn backward(&self, inputs: &[Tensor<T>], _: &Tensor<T>, grad: &[T]) {
        let (input, weight, bias) = (&inputs[0], &inputs[1], &inputs[2]);
        let g = &self.geom;
        let (o, r, p) = (self.out_channels, g.rows(), g.cols());
        if weight.requires_grad() {
            let xd = input.data();
            let cols: Cow<'_, [T]> = if g.is_pointwise() {
                Cow::Borrowed(&xd[..])
            } else {
                Cow::Owned(im2col(g, &xd))
            };
            weight.accumulate_grad(|dw| {
                T::gemm(
                    o,
                    p,
                    r,
                    MatRef::row_major(grad, p),
                    MatRef::transposed(&cols, p),
                    dw,
                    true,
                );
            });
        }
        bias.accumulate_grad(|db| {
            for (k, d) in db.iter_mut().enumerate() {
                *d += grad[k * p..(k + 1) * p].iter().copied().sum::<T>();
            }
        });
        if input.requires_grad() {
            let wd = weight.data();
            if g.is_pointwise() {
                input.accumulate_grad(|dx| {
                    T::gemm(r, o, p, MatRef::transposed(&wd, r), MatRef::row_major(grad, p), dx, true);
                });
            } else {
                let mut dcols = vec![T::zero(); r * p];
                T::gemm(r, o, p, MatRef::transposed(&wd, r), MatRef::row_major(grad, p), &mut dcols, false);
                input.accumulate_grad(|dx| col2im_add(g, &dcols, dx));
            }
        }
    }
}

/// Stride-1 2-D cross-correlation of a `C × H × W` input with an
/// `O × C × kH × kW` weight, plus a per-output-channel bias.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    padding: Padding,
) -> Result<Tensor<T>> {
    let (c, h, w) = input.chw()?;
    let &[o, wc, kh, kw] = weight.shape() else {
        return Err(Error::Shape(format!(
            "conv2d weight must be O×C×kH×kW, got {:?}",
            weight.shape()
        )));
    };
    if wc != c {
        return Err(Error::Shape(format!(
            "conv2d: input has {c} channels, weight expects {wc}"
        )));
    }
    if bias.numel() != o {
        return Err(Error::Shape(format!(
            "conv2d: bias holds {} values for {o} output channels",
            bias.numel()
        )));
    }
    let (ph, pw) = match padding {
        Padding::Same => {
            if kh % 2 == 0 || kw % 2 == 0 {
                return Err(Error::Config(format!(
                    "same padding needs an odd kernel, got {kh}×{kw}"
                )));
            }
            ((kh - 1) / 2, (kw - 1) / 2)
        }
        Padding::Explicit { h, w } => (h, w),
    };
    if h + 2 * ph < kh || w + 2 * pw < kw {
        return Err(Error::Config(format!(
            "conv2d: {kh}×{kw} kernel larger than padded {h}×{w} input"
        )));
    }
    let geom = Geometry {
        c,
        h,
        w,
        kh,
        kw,
        ph,
        pw,
        oh: h + 2 * ph - kh + 1,
        ow: w + 2 * pw - kw + 1,
    };
    let (r, p) = (geom.rows(), geom.cols());
    let mut out = vec![T::zero(); o * p];
    {
        let bd = bias.data();
        for (k, b) in bd.iter().enumerate() {
            out[k * p..(k + 1) * p].fill(*b);
        }
        let xd = input.data();
        let wd = weight.data();
        let cols: Cow<'_, [T]> = if geom.is_pointwise() {
            Cow::Borrowed(&xd[..])
        } else {
            Cow::Owned(im2col(&geom, &xd))
        };
        T::gemm(o, r, p, MatRef::row_major(&wd, r), MatRef::row_major(&cols, p), &mut out, true);
    }
    Ok(Tensor::from_op(
        vec![o, geom.oh, geom.ow],
        out,
        "conv2d",
        vec![input.clone(), weight.clone(), bias.clone()],
        ConvBack { geom, out_channels: o },
    ))
}
