//! Differentiable backward warping.
//!
//! `output(x, y)` bilinearly samples the source at `(x + u, y + v)`. Sample
//! coordinates outside the image are clamped to the border. The warp is
//! differentiable with respect to both the image and the flow; at integer
//! sample positions the flow derivative takes the right-hand linear piece.

use crate::error::{Error, Result};
use crate::tensor::{Backward, Scalar, Tensor};

/// Per-pixel displacement in pixels: channel 0 horizontal, channel 1 vertical.
#[derive(Debug, Clone)]
pub struct FlowField<T: Scalar = f32>(Tensor<T>);

impl<T: Scalar> FlowField<T> {
    pub fn new(t: Tensor<T>) -> Result<Self> {
        let (c, _, _) = t.chw()?;
        if c != 2 {
            return Err(Error::Shape(format!("flow needs 2 channels, got {:?}", t.shape())));
        }
        if let Some(i) = t.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("flow value at index {i}")));
        }
        Ok(FlowField(t))
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        FlowField(Tensor::zeros(&[2, h, w]))
    }

    /// Constant displacement `(u, v)` everywhere.
    pub fn constant(h: usize, w: usize, u: f64, v: f64) -> Self {
        let mut d = vec![T::of(u); 2 * h * w];
        d[h * w..].fill(T::of(v));
        FlowField(Tensor::from_vec(&[2, h, w], d).expect("shape"))
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    /// Euclidean magnitude per pixel.
    pub fn magnitudes(&self) -> Vec<f64> {
        let d = self.0.data();
        let p = self.height() * self.width();
        (0..p).map(|i| d[i].f64().hypot(d[p + i].f64())).collect()
    }
}

/// A frame registered to the reference, with where it came from.
#[derive(Debug, Clone)]
pub struct WarpedFrame<T: Scalar = f32> {
    pub image: Tensor<T>,
    pub source: usize,
    pub flow: FlowField<T>,
}

#[derive(Clone, Copy)]
struct Sample<T> {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    fx: T,
    fy: T,
    free_x: bool,
    free_y: bool,
}

fn axis_sample<T: Scalar>(pos: T, len: usize) -> (usize, usize, T, bool) {
    let last = T::of((len - 1) as f64);
    let (p, free) = if pos < T::zero() {
        (T::zero(), false)
    } else if pos > last {
        (last, false)
    } else {
        (pos, true)
    };
    let i0 = p.floor();
    let f = p - i0;
    let i0 = i0.to_usize().unwrap_or(0).min(len - 1);
    (i0, (i0 + 1).min(len - 1), f, free)
}

fn samples<T: Scalar>(flow: &[T], h: usize, w: usize) -> Vec<Sample<T>> {
    let p = h * w;
    let mut out = Vec::with_capacity(p);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (x0, x1, fx, free_x) = axis_sample(T::of(x as f64) + flow[i], w);
            let (y0, y1, fy, free_y) = axis_sample(T::of(y as f64) + flow[p + i], h);
            out.push(Sample { x0, x1, y0, y1, fx, fy, free_x, free_y });
        }
    }
    out
}

struct WarpBack;

impl<T: Scalar> Backward<T> for WarpBack {
    fn backward(&self, inputs: &[Tensor<T>], _: &Tensor<T>, grad: &[T]) {
        let (image, flow) = (&inputs[0], &inputs[1]);
        let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
        let p = h * w;
        let s = samples(&flow.data(), h, w);
        let one = T::one();
        if image.requires_grad() {
            image.accumulate_grad(|di| {
                for ch in 0..c {
                    let plane = &mut di[ch * p..(ch + 1) * p];
                    let g = &grad[ch * p..(ch + 1) * p];
                    for (i, sm) in s.iter().enumerate() {
                        let gi = g[i];
                        plane[sm.y0 * w + sm.x0] += gi * (one - sm.fx) * (one - sm.fy);
                        plane[sm.y0 * w + sm.x1] += gi * sm.fx * (one - sm.fy);
                        plane[sm.y1 * w + sm.x0] += gi * (one - sm.fx) * sm.fy;
                        plane[sm.y1 * w + sm.x1] += gi * sm.fx * sm.fy;
                    }
                }
            });
        }
        if flow.requires_grad() {
            let id = image.data();
            flow.accumulate_grad(|df| {
                for ch in 0..c {
                    let plane = &id[ch * p..(ch + 1) * p];
                    let g = &grad[ch * p..(ch + 1) * p];
                    for (i, sm) in s.iter().enumerate() {
                        let a = plane[sm.y0 * w + sm.x0];
                        let b = plane[sm.y0 * w + sm.x1];
                        let cc = plane[sm.y1 * w + sm.x0];
                        let d = plane[sm.y1 * w + sm.x1];
                        if sm.free_x {
                            df[i] += g[i] * ((one - sm.fy) * (b - a) + sm.fy * (d - cc));
                        }
                        if sm.free_y {
                            df[p + i] += g[i] * ((one - sm.fx) * (cc - a) + sm.fx * (d - b));
                        }
                    }
                }
            });
        }
    }
}

/// Raw warp on tensors: `image` is `C × H × W`, `flow` is `2 × H × W`.
pub fn warp_tensor<T: Scalar>(image: &Tensor<T>, flow: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = image.chw()?;
    let (fc, fh, fw) = flow.chw()?;
    if fc != 2 || fh != h || fw != w {
        return Err(Error::Shape(format!(
            "flow {:?} does not match image {:?}",
            flow.shape(),
            image.shape()
        )));
    }
    let fd = flow.data();
    if let Some(i) = fd.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("flow value at index {i}")));
    }
    let s = samples(&fd, h, w);
    drop(fd);
    let p = h * w;
    let id = image.data();
    let one = T::one();
    let mut out = vec![T::zero(); c * p];
    for ch in 0..c {
        let plane = &id[ch * p..(ch + 1) * p];
        for (i, sm) in s.iter().enumerate() {
            let top = (one - sm.fx) * plane[sm.y0 * w + sm.x0] + sm.fx * plane[sm.y0 * w + sm.x1];
            let bot = (one - sm.fx) * plane[sm.y1 * w + sm.x0] + sm.fx * plane[sm.y1 * w + sm.x1];
            out[ch * p + i] = (one - sm.fy) * top + sm.fy * bot;
        }
    }
    drop(id);
    Ok(Tensor::from_op(
        vec![c, h, w],
        out,
        "bilinear_warp",
        vec![image.clone(), flow.clone()],
        WarpBack,
    ))
}

/// Registers `image` (frame index `source`) by backward warping along `flow`.
pub fn bilinear_warp<T: Scalar>(image: &Tensor<T>, flow: &FlowField<T>, source: usize) -> Result<WarpedFrame<T>> {
    Ok(WarpedFrame {
        image: warp_tensor(image, flow.tensor())?,
        source,
        flow: flow.clone(),
    })
}
