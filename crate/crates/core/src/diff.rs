//! Loss + exact reverse-mode gradients for a batch of windows, and the
//! central finite-difference verification harness.
//!
//! The batch loss is the masked mean over every valid timestep of every
//! window; gradients are accumulated window by window in a fixed order, so
//! identical (params, batch, seed) produce a bitwise-identical report.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::WindowSample;
use crate::error::{Error, Result};
use crate::model::{backward_window, forward_window, ForwardOpts, ModelConfig, Precision};
use crate::params::{GradReport, ParamSet};
use crate::rng::{self, stream};
use crate::train::loss::{loss_grad_into, position_losses, LossKind};

/// What to optimize and how the stochastic parts are seeded.
#[derive(Debug, Clone, Copy)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Dropout rate (0 disables; masks drawn from `seed`'s dropout stream).
    pub dropout: f64,
    pub seed: u64,
}

impl LossSpec {
    pub fn deterministic(kind: LossKind) -> Self {
        LossSpec { kind, dropout: 0.0, seed: 0 }
    }
}

fn total_valid(batch: &[WindowSample]) -> usize {
    batch.iter().map(|w| w.valid_count()).sum()
}

/// Forward-only batch loss (same masks and order as the gradient path).
pub fn evaluate_loss(cfg: &ModelConfig, params: &ParamSet, batch: &[WindowSample], spec: &LossSpec) -> Result<f64> {
    let denom = total_valid(batch);
    if denom == 0 {
        return Err(Error::domain("batch has no unmasked positions"));
    }
    let mut rng = rng::stream_rng(spec.seed, stream::DROPOUT);
    let mut loss_sum = 0.0;
    for window in batch {
        let opts = ForwardOpts { dropout: spec.dropout, rng: Some(&mut rng), precision: Precision::F64 };
        let caches = forward_window(cfg, params, window, opts)?;
        loss_sum += position_losses(&caches.preds, &window.targets, spec.kind)?;
    }
    Ok(loss_sum / denom as f64)
}

/// Loss plus exact gradients for every parameter.
pub fn evaluate_with_gradients(
    cfg: &ModelConfig,
    params: &ParamSet,
    batch: &[WindowSample],
    spec: &LossSpec,
) -> Result<GradReport> {
    let denom = total_valid(batch);
    if denom == 0 {
        return Err(Error::domain("batch has no unmasked positions"));
    }
    let mut grads = params.zeros_like();
    let mut rng = rng::stream_rng(spec.seed, stream::DROPOUT);
    let mut loss_sum = 0.0;
    let scale = 1.0 / denom as f64;
    for window in batch {
        let opts = ForwardOpts { dropout: spec.dropout, rng: Some(&mut rng), precision: Precision::F64 };
        let caches = forward_window(cfg, params, window, opts)?;
        loss_sum += position_losses(&caches.preds, &window.targets, spec.kind)?;
        let mut g_preds = vec![0.0; window.k * caches.preds.dim];
        loss_grad_into(&caches.preds, &window.targets, spec.kind, scale, &mut g_preds)?;
        backward_window(cfg, params, window, &caches, &g_preds, &mut grads)?;
    }
    let loss = loss_sum * scale;
    if !loss.is_finite() {
        let bad = grads.non_finite_names();
        return Err(Error::numeric(alloc::format!(
            "non-finite loss {loss}; non-finite gradients in [{}]",
            bad.join(", ")
        )));
    }
    GradReport::new(loss, grads, params)
}

/// Per-parameter worst relative error of the analytic gradient against
/// central finite differences.
#[derive(Debug, Clone)]
pub struct FdReport {
    pub max_rel: f64,
    pub per_param: Vec<(String, f64)>,
}

/// Central finite differences: per parameter tensor, the relative error
/// `|g_analytic - g_numeric| / (|g_numeric| + 1e-12)` is evaluated on the
/// L2 norms of the gradient tensors (an elementwise reading is
/// ill-defined wherever a single element's true gradient crosses zero),
/// then maximized over parameters. Double precision throughout.
pub fn finite_difference_check(
    cfg: &ModelConfig,
    params: &ParamSet,
    batch: &[WindowSample],
    spec: &LossSpec,
    eps: f64,
) -> Result<FdReport> {
    let report = evaluate_with_gradients(cfg, params, batch, spec)?;
    let mut work = params.clone();
    let names: Vec<String> = params.names().map(String::from).collect();
    let mut per_param = Vec::with_capacity(names.len());
    let mut max_rel = 0.0f64;
    for name in &names {
        let n_elems = params.get(name)?.len();
        let mut diff_sq = 0.0f64;
        let mut num_sq = 0.0f64;
        for i in 0..n_elems {
            let orig = params.get(name)?.data()[i];
            work.values_mut(name)?[i] = orig + eps;
            let lp = evaluate_loss(cfg, &work, batch, spec)?;
            work.values_mut(name)?[i] = orig - eps;
            let lm = evaluate_loss(cfg, &work, batch, spec)?;
            work.values_mut(name)?[i] = orig;
            let g_num = (lp - lm) / (2.0 * eps);
            let g_ana = report.grads.get(name)?.data()[i];
            diff_sq += (g_ana - g_num) * (g_ana - g_num);
            num_sq += g_num * g_num;
        }
        let rel = crate::mathx::sqrt(diff_sq) / (crate::mathx::sqrt(num_sq) + 1e-12);
        if rel > max_rel {
            max_rel = rel;
        }
        per_param.push((name.clone(), rel));
    }
    Ok(FdReport { max_rel, per_param })
}
