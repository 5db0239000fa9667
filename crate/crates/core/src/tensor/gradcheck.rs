//! Central finite-difference verification of autodiff gradients (f64).
//!
//! The numeric derivative never touches the backward pass: each sampled
//! entry is perturbed in place and the forward closure re-evaluated.
//! Entries whose neighbourhood contains a kink (ReLU switch, bilinear cell
//! boundary, L1 tie) are detected by comparing one-sided and half-step
//! differences and are redrawn instead of being compared.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct CheckConfig {
    /// Central difference step.
    pub step: f64,
    pub samples: usize,
    /// Bound on `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
    pub tolerance: f64,
    /// Gradients below this magnitude are compared in absolute terms.
    pub floor: f64,
    pub seed: u64,
    /// Draw budget as a multiple of `samples`.
    pub max_draw_factor: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            step: 1e-5,
            samples: 100,
            tolerance: 1e-6,
            floor: 1e-3,
            seed: 0,
            max_draw_factor: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub tensor: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub requested: usize,
    pub checked: usize,
    pub skipped_nonsmooth: usize,
    pub max_rel_err: f64,
    pub worst: Option<Mismatch>,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.checked == self.requested && self.max_rel_err < self.tolerance
    }
}

/// Checks gradients of `loss` with respect to the leaf tensors `vars`.
/// `loss` must be a pure function of the current values of `vars`.
pub fn check_leaves(
    vars: &[Tensor<f64>],
    loss: impl Fn() -> Result<Tensor<f64>>,
    cfg: &CheckConfig,
) -> Result<CheckReport> {
    for v in vars {
        v.zero_grad();
    }
    let base = loss()?;
    base.backward()?;
    let f0 = base.item();
    drop(base);
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|v| v.grad().unwrap_or_else(|| vec![0.0; v.numel()]))
        .collect();
    let total: usize = vars.iter().map(|v| v.numel()).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let eval_at = |t: usize, i: usize, delta: f64| -> Result<f64> {
        let orig = vars[t].data()[i];
        vars[t].data_mut()[i] = orig + delta;
        let r = loss().map(|l| l.item());
        vars[t].data_mut()[i] = orig;
        r
    };
    let h = cfg.step;
    let mut report = CheckReport {
        requested: cfg.samples,
        checked: 0,
        skipped_nonsmooth: 0,
        max_rel_err: 0.0,
        worst: None,
        tolerance: cfg.tolerance,
    };
    let mut draws = 0;
    while report.checked < cfg.samples && draws < cfg.samples * cfg.max_draw_factor && total > 0 {
        draws += 1;
        let mut flat = rng.random_range(0..total);
        let mut t = 0;
        while flat >= vars[t].numel() {
            flat -= vars[t].numel();
            t += 1;
        }
        let i = flat;
        let (fp, fm) = (eval_at(t, i, h)?, eval_at(t, i, -h)?);
        let (fp2, fm2) = (eval_at(t, i, h / 2.0)?, eval_at(t, i, -h / 2.0)?);
        let central = (fp - fm) / (2.0 * h);
        let central_half = (fp2 - fm2) / h;
        let asym = (fp - f0) / h - (f0 - fm) / h;
        let asym_half = (fp2 - f0) / (h / 2.0) - (f0 - fm2) / (h / 2.0);
        let a = analytic[t][i];
        let scale = a.abs().max(central.abs()).max(cfg.floor);
        let kink_bound = cfg.tolerance * scale / 4.0;
        if (central - central_half).abs() > kink_bound || (asym - 2.0 * asym_half).abs() > kink_bound {
            report.skipped_nonsmooth += 1;
            continue;
        }
        let rel = (a - central).abs() / scale;
        report.checked += 1;
        if rel >= report.max_rel_err {
            report.max_rel_err = rel;
            report.worst = Some(Mismatch {
                tensor: t,
                index: i,
                analytic: a,
                numeric: central,
                rel_err: rel,
            });
        }
    }
    Ok(report)
}

/// Checks an operation: each input becomes a fresh leaf and `f` maps them
/// to a scalar.
pub fn check_op(
    inputs: &[Tensor<f64>],
    f: impl Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
    cfg: &CheckConfig,
) -> Result<CheckReport> {
    let vars = inputs
        .iter()
        .map(|t| Tensor::param(t.shape(), t.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    check_leaves(&vars, || f(&vars), cfg)
}
