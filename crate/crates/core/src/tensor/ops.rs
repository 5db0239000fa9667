use super::{Backward, Scalar, Tensor};
use crate::error::{Error, Result};

fn same_shape<T: Scalar>(op: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Gradient flows unchanged to the single input.
pub(crate) struct PassThrough;

impl<T: Scalar> Backward<T> for PassThrough {
    fn backward(&self, inputs: &[Tensor<T>], _: &Tensor<T>, grad: &[T]) {
        inputs[0].add_grad(grad);
    }
}

struct AddBack;

impl<T: Scalar> Backward<T> for AddBack {
    fn backward(&self, inputs: &[Tensor<T>], _: &Tensor<T>, grad: &[T]) {
        inputs[0].add_grad(grad);
        inputs[1].add_grad(grad);
    }
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data().iter()).map(|(x, y)| *x + *y).collect();
    Ok(Tensor::from_op(a.shape().to_vec(), data, "add", vec![a.clone(), b.clone()], AddBack))
}

struct SubBack;

impl<T: Scalar> Backward<T> for SubBack {
    fn backward(&self, inputs: &[Tensor<T>], _: &Tensor<T>, grad: &[T]) {
        inputs[0].add_grad(grad);
        inputs[1].accumulate_grad(|g| {
            for (a, b) in g.iter_mut().zip(grad) {
                *a -= *b;
            }
        });
    }
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("sub", a, b)?;
    let data = a.data().iter().zip(b.data().iter()).map(|(x, y)| *x - *y).collect();
    Ok(Tensor::from_op(a.shape().to_vec(), data, "sub", vec![a.clone(), b.clone()], SubBack))
}

struct MulBack;

impl<T: Scalar> Backward<T> for MulBack {
    fn backward(&self, inputs: &[Tensor<T>], _: &Tensor<T>, grad: &[T]) {
        let (a, b) = (&inputs[0], &inputs[1]);
        if a.requires_grad() {
            let bd = b.data();
            a.accumulate_grad(|g| {
                for ((gi, gr), bv) in g.iter_mut().zip(grad).zip(bd.iter()) {
                    *gi += *gr * *bv;
                }
            });
        }
        if b.requires_grad() {
            let ad = a.data();
            b.accumulate_grad(|g| {
                for ((gi, gr), av) in g.iter_mut().zip(grad).zip(ad.iter()) {
                    *gi += *gr * *av;
                }
            });
        }
    }
}

/// Elementwise product.
pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("mul", a, b)?;
    let data = a.data().iter().zip(b.data().iter()).map(|(x, y)| *x * *y).collect();
    Ok(Tensor::from_op(a.shape().to_vec(), data, "mul", vec![a.clone(), b.clone()], MulBack))
}

struct ScaleBack<T>(T);

impl<T: Scalar> Backward<T> for ScaleBack<T> {
    fn backward(&self, inputs: &[Tensor<T>], _: &Tensor<T>, grad: &[T]) {
        let s = self.0;
        inputs[0].accumulate_grad(|g| {
            for (a, b) in g.iter_mut().zip(grad) {
                *a += *b * s;
            }
        });
    }
}

pub fn scale<T: Scalar>(x: &Tensor<T>, factor: f64) -> Tensor<T> {
    let s = T::of(factor);
    let data = x.data().iter().map(|v| *v * s).collect();
    Tensor::from_op(x.shape().to_vec(), data, "scale", vec![x.clone()], ScaleBack(s))
}

pub fn add_scalar<T: Scalar>(x: &Tensor<T>, c: f64) -> Tensor<T> {
    let c = T::of(c);
    let data = x.data().iter().map(|v| *v + c).collect();
    Tensor::from_op(x.shape().to_vec(), data, "add_scalar", vec![x.clone()], PassThrough)
}

struct ReluBack;

impl<T: Scalar> Backward<T> for ReluBack {
    fn backward(&self, inputs: &[Tensor<T>], _: &Tensor<T>, grad: &[T]) {
        let xd = inputs[0].data();
        inputs[0].accumulate_grad(|g| {
            for ((gi, gr), x) in g.iter_mut().zip(grad).zip(xd.iter()) {
                if *x > T::zero() {
                    *gi += *gr;
                }
            }
        });
    }
}

/// `max(x, 0)` with subgradient 0 at exactly 0.
pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let data = x.data().iter().map(|v| if *v > T::zero() { *v } else { T::zero() }).collect();
    Tensor::from_op(x.shape().to_vec(), data, "relu", vec![x.clone()], ReluBack)
}

struct SigmoidBack;

impl<T: Scalar> Backward<T> for SigmoidBack {
    fn backward(&self, inputs: &[Tensor<T>], out: &Tensor<T>, grad: &[T]) {
        let yd = out.data();
        inputs[0].accumulate_grad(|g| {
            for ((gi, gr), y) in g.iter_mut().zip(grad).zip(yd.iter()) {
                *gi += *gr * *y * (T::one() - *y);
            }
        });
    }
}

/// Logistic function.
pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .map(|v| {
            // split on sign so exp never overflows
            if *v >= T::zero() {
                T::one() / (T::one() + (-*v).exp())
            } else {
                let e = v.exp();
                e / (T::one() + e)
            }
        })
        .collect();
    Tensor::from_op(x.shape().to_vec(), data, "sigmoid", vec![x.clone()], SigmoidBack)
}

struct SumBack(f64);

impl<T: Scalar> Backward<T> for SumBack {
    fn backward(&self, inputs: &[Tensor<T>], _: &Tensor<T>, grad: &[T]) {
        let g0 = grad[0] * T::of(self.0);
        inputs[0].accumulate_grad(|g| {
            for v in g.iter_mut() {
                *v += g0;
            }
        });
    }
}

pub fn sum<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.data().iter().copied().sum();
    Tensor::from_op(Vec::new(), vec![s], "sum", vec![x.clone()], SumBack(1.0))
}

pub fn mean<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let n = x.numel().max(1) as f64;
    let s: T = x.data().iter().copied().sum();
    Tensor::from_op(Vec::new(), vec![s / T::of(n)], "mean", vec![x.clone()], SumBack(1.0 / n))
}

struct L1Back;

impl<T: Scalar> Backward<T> for L1Back {
    fn backward(&self, inputs: &[Tensor<T>], _: &Tensor<T>, grad: &[T]) {
        let n = T::of(inputs[0].numel().max(1) as f64);
        let g0 = grad[0] / n;
        let (p, t) = (&inputs[0], &inputs[1]);
        let pd = p.data();
        let td = t.data();
        let sign = |a: T, b: T| {
            if a > b {
                g0
            } else if a < b {
                -g0
            } else {
                T::zero()
            }
        };
        p.accumulate_grad(|g| {
            for (i, gi) in g.iter_mut().enumerate() {
                *gi += sign(pd[i], td[i]);
            }
        });
        t.accumulate_grad(|g| {
            for (i, gi) in g.iter_mut().enumerate() {
                *gi -= sign(pd[i], td[i]);
            }
        });
    }
}

/// Mean absolute difference. Subgradient 0 at ties.
pub fn l1_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("l1_loss", pred, target)?;
    let n = pred.numel().max(1) as f64;
    let s: T = pred
        .data()
        .iter()
        .zip(target.data().iter())
        .map(|(a, b)| (*a - *b).abs())
        .sum();
    Ok(Tensor::from_op(
        Vec::new(),
        vec![s / T::of(n)],
        "l1_loss",
        vec![pred.clone(), target.clone()],
        L1Back,
    ))
}

struct ConcatBack {
    sizes: Vec<usize>,
}

impl<T: Scalar> Backward<T> for ConcatBack {
    fn backward(&self, inputs: &[Tensor<T>], _: &Tensor<T>, grad: &[T]) {
        let mut off = 0;
        for (t, &n) in inputs.iter().zip(&self.sizes) {
            t.add_grad(&grad[off..off + n]);
            off += n;
        }
    }
}

/// Concatenation along the leading (channel) axis.
pub fn concat<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
    if first.rank() == 0 {
        return Err(Error::Shape("concat of scalars".into()));
    }
    let tail = &first.shape()[1..];
    let mut lead = 0;
    let mut data = Vec::new();
    for p in parts {
        if p.rank() != first.rank() || &p.shape()[1..] != tail {
            return Err(Error::Shape(format!(
                "concat: {:?} incompatible with {:?}",
                p.shape(),
                first.shape()
            )));
        }
        lead += p.shape()[0];
        data.extend_from_slice(&p.data());
    }
    let mut shape = vec![lead];
    shape.extend_from_slice(tail);
    let sizes = parts.iter().map(|p| p.numel()).collect();
    Ok(Tensor::from_op(
        shape,
        data,
        "concat",
        parts.iter().map(|t| (*t).clone()).collect(),
        ConcatBack { sizes },
    ))
}

struct NarrowBack {
    offset: usize,
}

impl<T: Scalar> Backward<T> for NarrowBack {
    fn backward(&self, inputs: &[Tensor<T>], _: &Tensor<T>, grad: &[T]) {
        let off = self.offset;
        inputs[0].accumulate_grad(|g| {
            for (a, b) in g[off..off + grad.len()].iter_mut().zip(grad) {
                *a += *b;
            }
        });
    }
}

/// Slice `len` entries of the leading axis starting at `start`.
pub fn narrow<T: Scalar>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    if x.rank() == 0 || start + len > x.shape()[0] || len == 0 {
        return Err(Error::Shape(format!(
            "narrow {start}..{} out of range for {:?}",
            start + len,
            x.shape()
        )));
    }
    let inner: usize = x.shape()[1..].iter().product();
    let data = x.data()[start * inner..(start + len) * inner].to_vec();
    let mut shape = x.shape().to_vec();
    shape[0] = len;
    Ok(Tensor::from_op(
        shape,
        data,
        "narrow",
        vec![x.clone()],
        NarrowBack { offset: start * inner },
    ))
}

struct MulMaskBack;

impl<T: Scalar> Backward<T> for MulMaskBack {
    fn backward(&self, inputs: &[Tensor<T>], _: &Tensor<T>, grad: &[T]) {
        let (img, mask) = (&inputs[0], &inputs[1]);
        let plane = mask.numel();
        if img.requires_grad() {
            let md = mask.data();
            img.accumulate_grad(|g| {
                for (i, gi) in g.iter_mut().enumerate() {
                    *gi += grad[i] * md[i % plane];
                }
            });
        }
        if mask.requires_grad() {
            let id = img.data();
            mask.accumulate_grad(|g| {
                for (i, gr) in grad.iter().enumerate() {
                    g[i % plane] += *gr * id[i];
                }
            });
        }
    }
}

/// Multiplies every channel of a `C × H × W` image by a `1 × H × W` mask.
pub fn mul_mask<T: Scalar>(image: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, h, w) = image.chw()?;
    let (mc, mh, mw) = mask.chw()?;
    if mc != 1 || mh != h || mw != w {
        return Err(Error::Shape(format!(
            "mask {:?} does not match image {:?}",
            mask.shape(),
            image.shape()
        )));
    }
    let plane = h * w;
    let md = mask.data();
    let data = image.data().iter().enumerate().map(|(i, v)| *v * md[i % plane]).collect();
    drop(md);
    Ok(Tensor::from_op(
        image.shape().to_vec(),
        data,
        "mul_mask",
        vec![image.clone(), mask.clone()],
        MulMaskBack,
    ))
}

struct SpatialNormBack<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    plane: usize,
}

impl<T: Scalar> Backward<T> for SpatialNormBack<T> {
    fn backward(&self, inputs: &[Tensor<T>], _: &Tensor<T>, grad: &[T]) {
        let (x, gamma, beta) = (&inputs[0], &inputs[1], &inputs[2]);
        let p = self.plane;
        let channels = self.inv_std.len();
        let n = T::of(p as f64);
        let mut dgamma = vec![T::zero(); channels];
        let mut dbeta = vec![T::zero(); channels];
        for c in 0..channels {
            let g = &grad[c * p..(c + 1) * p];
            let xh = &self.xhat[c * p..(c + 1) * p];
            for (gi, xi) in g.iter().zip(xh) {
                dgamma[c] += *gi * *xi;
                dbeta[c] += *gi;
            }
        }
        if x.requires_grad() {
            let gd = gamma.data();
            x.accumulate_grad(|dx| {
                for c in 0..channels {
                    let g = &grad[c * p..(c + 1) * p];
                    let xh = &self.xhat[c * p..(c + 1) * p];
                    let k = gd[c] * self.inv_std[c];
                    let mean_g = dbeta[c] / n;
                    let mean_gx = dgamma[c] / n;
                    for ((d, gi), xi) in dx[c * p..(c + 1) * p].iter_mut().zip(g).zip(xh) {
                        *d += k * (*gi - mean_g - *xi * mean_gx);
                    }
                }
            });
        }
        gamma.add_grad(&dgamma);
        beta.add_grad(&dbeta);
    }
}

/// Per-channel normalization over spatial positions:
/// `(x − mean) / sqrt(var + epsilon) · gamma + beta`.
pub fn spatial_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    epsilon: f64,
) -> Result<Tensor<T>> {
    let (c, h, w) = x.chw()?;
    if gamma.numel() != c || beta.numel() != c {
        return Err(Error::Shape(format!(
            "spatial_norm: {c} channels but gamma/beta hold {}/{}",
            gamma.numel(),
            beta.numel()
        )));
    }
    let p = h * w;
    let n = T::of(p as f64);
    let eps = T::of(epsilon);
    let xd = x.data();
    let gd = gamma.data();
    let bd = beta.data();
    let mut out = vec![T::zero(); c * p];
    let mut xhat = vec![T::zero(); c * p];
    let mut inv_std = vec![T::zero(); c];
    for ch in 0..c {
        let xs = &xd[ch * p..(ch + 1) * p];
        let m0 = xs.iter().copied().sum::<T>() / n;
        let m = m0 + xs.iter().map(|v| *v - m0).sum::<T>() / n;
        let var = xs.iter().map(|v| (*v - m) * (*v - m)).sum::<T>() / n;
        let is = T::one() / (var + eps).sqrt();
        inv_std[ch] = is;
        for i in 0..p {
            let xh = (xs[i] - m) * is;
            xhat[ch * p + i] = xh;
            out[ch * p + i] = xh * gd[ch] + bd[ch];
        }
    }
    drop((xd, gd, bd));
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        out,
        "spatial_norm",
        vec![x.clone(), gamma.clone(), beta.clone()],
        SpatialNormBack { xhat, inv_std, plane: p },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_op, CheckConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn relu_values() {
        let x = Tensor::<f32>::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).to_vec(), vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn relu_all_negative_blocks_gradient() {
        let x = Tensor::<f64>::param(&[4], vec![-1.0, -0.5, -3.0, -1e-9]).unwrap();
        let y = relu(&x);
        assert!(y.data().iter().all(|v| *v == 0.0));
        sum(&y).backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn relu_gradient_is_indicator() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vals: Vec<f64> = (0..64)
            .map(|_| {
                let v: f64 = rng.random_range(0.1..1.0);
                if rng.random_bool(0.5) { v } else { -v }
            })
            .collect();
        let x = Tensor::<f64>::param(&[64], vals.clone()).unwrap();
        sum(&relu(&x)).backward().unwrap();
        let g = x.grad().unwrap();
        for (gi, v) in g.iter().zip(&vals) {
            assert_eq!(*gi, if *v > 0.0 { 1.0 } else { 0.0 });
        }
        let report = check_op(&[x.detach()], |xs| Ok(sum(&relu(&xs[0]))), &CheckConfig::default()).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn l1_loss_values() {
        let a = Tensor::<f64>::from_vec(&[4], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(l1_loss(&a, &a).unwrap().item(), 0.0);
        let b = add_scalar(&a, 0.5);
        assert!((l1_loss(&b, &a).unwrap().item() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn l1_loss_matches_direct_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let av = rand_vec(&mut rng, 300);
        let bv = rand_vec(&mut rng, 300);
        let mut oracle = 0.0f64;
        for i in 0..300 {
            oracle += (av[i] - bv[i]).abs();
        }
        oracle /= 300.0;
        let a = Tensor::<f64>::from_vec(&[300], av).unwrap();
        let b = Tensor::<f64>::from_vec(&[300], bv).unwrap();
        assert!((l1_loss(&a, &b).unwrap().item() - oracle).abs() < 1e-7);
        assert!(l1_loss(&a, &Tensor::zeros(&[299])).is_err());
    }

    #[test]
    fn l1_subgradient_zero_at_ties() {
        let p = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
        let t = Tensor::<f64>::from_vec(&[2], vec![1.0, 1.0]).unwrap();
        l1_loss(&p, &t).unwrap().backward().unwrap();
        assert_eq!(p.grad().unwrap(), vec![0.0, 0.5]);
    }

    #[test]
    fn spatial_norm_constant_channel_gives_beta() {
        let x = Tensor::<f64>::full(&[2, 3, 3], 0.7);
        let g = Tensor::from_vec(&[2], vec![2.0, 3.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![-0.25, 0.5]).unwrap();
        let y = spatial_norm(&x, &g, &b, 1e-5).unwrap();
        let d = y.data();
        assert!(d[..9].iter().all(|v| *v == -0.25));
        assert!(d[9..].iter().all(|v| *v == 0.5));
    }

    #[test]
    fn spatial_norm_single_pixel() {
        let x = Tensor::<f32>::from_vec(&[1, 1, 1], vec![4.0]).unwrap();
        let y = spatial_norm(&x, &Tensor::full(&[1], 1.0), &Tensor::full(&[1], 0.3), 1e-5).unwrap();
        assert_eq!(y.item(), 0.3);
    }

    #[test]
    fn spatial_norm_standardized_input_is_fixed_point() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 2], vec![-1.0, 1.0]).unwrap();
        let y = spatial_norm(&x, &Tensor::full(&[1], 1.0), &Tensor::full(&[1], 0.0), 1e-12).unwrap();
        let d = y.data();
        assert!((d[0] + 1.0).abs() < 1e-9 && (d[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn spatial_norm_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::<f64>::from_vec(&[2, 8, 8], rand_vec(&mut rng, 128).iter().map(|v| 3.0 * v + 1.0).collect()).unwrap();
        let y = spatial_norm(&x, &Tensor::full(&[2], 1.0), &Tensor::full(&[2], 0.0), 1e-5).unwrap();
        let d = y.data();
        for c in 0..2 {
            let s = &d[c * 64..(c + 1) * 64];
            let m: f64 = s.iter().sum::<f64>() / 64.0;
            let v: f64 = s.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 64.0;
            assert!(m.abs() < 1e-5);
            assert!((v - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn shape_errors() {
        let a = Tensor::<f32>::zeros(&[2, 2]);
        let b = Tensor::<f32>::zeros(&[4]);
        assert!(add(&a, &b).is_err());
        assert!(narrow(&a, 1, 2).is_err());
        assert!(mul_mask(&Tensor::<f32>::zeros(&[3, 2, 2]), &Tensor::zeros(&[1, 2, 3])).is_err());
        assert!(spatial_norm(&Tensor::<f32>::zeros(&[3, 2, 2]), &Tensor::zeros(&[2]), &Tensor::zeros(&[3]), 1e-5).is_err());
    }

    #[test]
    fn mask_scaling() {
        let img = Tensor::<f32>::from_vec(&[2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let half = Tensor::full(&[1, 1, 2], 0.5f32);
        assert_eq!(mul_mask(&img, &half).unwrap().to_vec(), vec![0.5, 1.0, 1.5, 2.0]);
    }
}
