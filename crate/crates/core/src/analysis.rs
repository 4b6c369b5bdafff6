//! Hidden-attention analysis and the mixer ablation harness.
//!
//! A selective scan is a data-dependent linear operator: its output at
//! token i is a weighted sum of all inputs j <= i with coefficients
//!
//! ```text
//! alpha[d, i, j] = sum_n C_i[n] * (prod_{k=j+1..i} A_bar_k[d, n]) * B_bar_j[d, n]
//! ```
//!
//! (the `exact` variant; adding the skip term reconstructs the scan output
//! identically). The `approx` variant replaces softplus by ReLU on the raw
//! delta projection, giving the cheap factored form
//! Q_i * exp((sum_k relu(dt_k)) A) * relu(dt_j) B_j with Q = S_C(x).
//! Channels are fused as the mean of absolute per-channel scores; layers
//! fuse by elementwise mean (default) or by a row-renormalized ordered
//! product (rollout).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::mathx;
use crate::model::{
    forward_window, init_params, BlockCache, ForwardCaches, ForwardOpts, MixerCache, ModelConfig,
};
use crate::params::ParamSet;
use crate::stats;
use crate::train::{eval_window, EpisodeTrace};

/// Which formula produced the scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum AttnVariant {
    Exact,
    Approx,
}

impl AttnVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttnVariant::Exact => "exact",
            AttnVariant::Approx => "approx",
        }
    }
}

/// Lower-triangular hidden-attention scores of one layer.
#[derive(Debug, Clone)]
pub struct AttentionMatrix {
    pub l: usize,
    pub d_inner: usize,
    pub variant: AttnVariant,
    /// Per-channel scores, d_inner x l x l, strictly zero above the diagonal.
    pub per_channel: Vec<f64>,
    /// Channel fusion: mean over channels of |score|, l x l.
    pub fused: Vec<f64>,
}

impl AttentionMatrix {
    pub fn channel(&self, d: usize) -> &[f64] {
        &self.per_channel[d * self.l * self.l..(d + 1) * self.l * self.l]
    }
}

fn mixer_cache_of(caches: &ForwardCaches, layer: usize) -> Result<&MixerCache> {
    match &caches.blocks[layer] {
        BlockCache::Pre { mixer, .. } | BlockCache::Post { mixer, .. } => Ok(mixer),
        BlockCache::Attn { .. } => Err(Error::state(
            "attention baseline layers do not cache selective-scan projections",
        )),
    }
}

/// Materialize the hidden-attention matrix of one layer from a cached
/// forward pass.
pub fn attention_matrix(caches: &ForwardCaches, layer: usize, variant: AttnVariant) -> Result<AttentionMatrix> {
    let mixer = mixer_cache_of(caches, layer)?;
    let l = mixer.l;
    let step = &mixer.step;
    let (di, n) = (step.d_inner(), step.n());
    let mut per_channel = vec![0.0; di * l * l];
    match variant {
        AttnVariant::Exact => {
            let mut prod = vec![0.0; n];
            for d in 0..di {
                for i in 0..l {
                    let c_i = &step.c()[i * n..(i + 1) * n];
                    prod.iter_mut().for_each(|p| *p = 1.0);
                    for j in (0..=i).rev() {
                        let bb = &step.b_bar()[(j * di + d) * n..(j * di + d + 1) * n];
                        let mut acc = 0.0;
                        for nn in 0..n {
                            acc += c_i[nn] * prod[nn] * bb[nn];
                        }
                        per_channel[(d * l + i) * l + j] = acc;
                        if j > 0 {
                            let ab = &step.a_bar()[(j * di + d) * n..(j * di + d + 1) * n];
                            for nn in 0..n {
                                prod[nn] *= ab[nn];
                            }
                        }
                    }
                }
            }
        }
        AttnVariant::Approx => {
            // relu(dt_raw) stands in for softplus both as the step size and
            // inside the decay exponent.
            let a = &mixer.a;
            for d in 0..di {
                for i in 0..l {
                    let c_i = &step.c()[i * n..(i + 1) * n];
                    let mut dt_sum = 0.0;
                    for j in (0..=i).rev() {
                        if j < i {
                            dt_sum += mixer.dt_raw[(j + 1) * di + d].max(0.0);
                        }
                        let dt_j = mixer.dt_raw[j * di + d].max(0.0);
                        let b_j = &mixer.b_mat[j * n..(j + 1) * n];
                        let mut acc = 0.0;
                        for nn in 0..n {
                            acc += c_i[nn] * mathx::exp(dt_sum * a[d * n + nn]) * dt_j * b_j[nn];
                        }
                        per_channel[(d * l + i) * l + j] = acc;
                    }
                }
            }
        }
    }
    let mut fused = vec![0.0; l * l];
    for i in 0..l {
        for j in 0..=i {
            let mut acc = 0.0;
            for d in 0..di {
                acc += mathx::abs(per_channel[(d * l + i) * l + j]);
            }
            fused[i * l + j] = acc / di as f64;
        }
    }
    Ok(AttentionMatrix { l, d_inner: di, variant, per_channel, fused })
}

/// Layer-fusion rule for stacked matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum FuseMode {
    /// Elementwise average.
    Mean,
    /// Ordered product layer_1 ... layer_n, rows renormalized to unit L1.
    Rollout,
}

impl FuseMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            FuseMode::Mean => "mean",
            FuseMode::Rollout => "rollout",
        }
    }
}

/// Fuse per-layer (channel-fused) l x l matrices.
pub fn fuse_layers(matrices: &[Vec<f64>], l: usize, mode: FuseMode) -> Result<Vec<f64>> {
    if matrices.is_empty() {
        return Err(Error::insufficient("fuse_layers needs at least one matrix"));
    }
    if matrices.iter().any(|m| m.len() != l * l) {
        return Err(Error::shape("fuse_layers: matrices must all be l x l"));
    }
    match mode {
        FuseMode::Mean => {
            let mut out = vec![0.0; l * l];
            for m in matrices {
                for (o, v) in out.iter_mut().zip(m) {
                    *o += v;
                }
            }
            let scale = 1.0 / matrices.len() as f64;
            out.iter_mut().for_each(|v| *v *= scale);
            Ok(out)
        }
        FuseMode::Rollout => {
            let renorm = |m: &mut [f64]| {
                for i in 0..l {
                    let row = &mut m[i * l..(i + 1) * l];
                    let sum: f64 = row.iter().map(|v| mathx::abs(*v)).sum();
                    if sum > 0.0 {
                        row.iter_mut().for_each(|v| *v /= sum);
                    }
                }
            };
            let mut acc = matrices[0].clone();
            renorm(&mut acc);
            for m in &matrices[1..] {
                let mut next = vec![0.0; l * l];
                // next = m @ acc: applying this layer after the ones before.
                for i in 0..l {
                    for j in 0..=i {
                        let mut s = 0.0;
                        for t in j..=i {
                            s += m[i * l + t] * acc[t * l + j];
                        }
                        next[i * l + j] = s;
                    }
                }
                renorm(&mut next);
                acc = next;
            }
            Ok(acc)
        }
    }
}

/// Which layer(s) a surface is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSelect {
    Single(usize),
    /// All layers fused with the given rule.
    Fused(FuseMode),
}

/// Decision-step attention surface: one row per decision step holding the
/// prediction-token attention over the most recent `k_tokens` tokens
/// (column k_tokens-1 is the current token; absent lags are zero).
#[derive(Debug, Clone)]
pub struct DecisionSurface {
    pub steps: Vec<usize>,
    pub k_tokens: usize,
    /// steps x k_tokens.
    pub rows: Vec<f64>,
    pub variant: AttnVariant,
}

/// Rebuilds each decision prefix of an episode, materializes the
/// hidden-attention matrix over exactly the tokens the model saw, and
/// keeps the prediction-token row restricted to its last `k_tokens`
/// columns. Steps with fewer tokens are left-truncated (leading zeros),
/// not errors.
pub fn decision_step_surface(
    cfg: &ModelConfig,
    params: &ParamSet,
    episode: &EpisodeTrace,
    layer: LayerSelect,
    k_tokens: usize,
    variant: AttnVariant,
    step_range: (usize, usize),
) -> Result<DecisionSurface> {
    if k_tokens == 0 {
        return Err(Error::config("surface needs k_tokens >= 1"));
    }
    let t_end = step_range.1.min(episode.len());
    if step_range.0 >= t_end {
        return Err(Error::insufficient("empty decision step range"));
    }
    let mut steps = Vec::new();
    let mut rows = Vec::new();
    for t in step_range.0..t_end {
        // Forward over the full prefix (window = t+1 timesteps, no padding).
        let w = eval_window(cfg, episode, t, t + 1);
        let caches = forward_window(cfg, params, &w, ForwardOpts::eval())?;
        let pred_idx = caches.tw.pred_token_idx[t];
        let fused = surface_matrix(&caches, cfg, layer, variant)?;
        let l = caches.tw.l_tok;
        let mut row = vec![0.0; k_tokens];
        for lag in 0..k_tokens.min(pred_idx + 1) {
            row[k_tokens - 1 - lag] = fused[pred_idx * l + (pred_idx - lag)];
        }
        steps.push(t);
        rows.extend_from_slice(&row);
    }
    Ok(DecisionSurface { steps, k_tokens, rows, variant })
}

fn surface_matrix(
    caches: &ForwardCaches,
    cfg: &ModelConfig,
    layer: LayerSelect,
    variant: AttnVariant,
) -> Result<Vec<f64>> {
    match layer {
        LayerSelect::Single(i) => Ok(attention_matrix(caches, i, variant)?.fused),
        LayerSelect::Fused(mode) => {
            let mats: Result<Vec<Vec<f64>>> = (0..cfg.n_layers)
                .map(|i| attention_matrix(caches, i, variant).map(|m| m.fused))
                .collect();
            let l = caches.tw.l_tok;
            fuse_layers(&mats?, l, mode)
        }
    }
}

/// Least-squares fit of ln(mean |score|) against lag. Returns (slope, R^2).
/// Lags with non-positive means are filtered; fewer than 3 surviving
/// points is an error.
pub fn fit_decay(per_lag_scores: &[f64]) -> Result<(f64, f64)> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (lag, &s) in per_lag_scores.iter().enumerate() {
        if s > 0.0 {
            xs.push(lag as f64);
            ys.push(mathx::ln(s));
        }
    }
    if xs.len() < 3 {
        return Err(Error::insufficient("fit_decay needs >= 3 lags with positive mean scores"));
    }
    let (slope, _, r2) = stats::linear_least_squares(&xs, &ys)?;
    Ok((slope, r2))
}

/// Column means of a surface by lag (lag 0 = current token), skipping
/// zero-padded entries.
pub fn surface_lag_means(surface: &DecisionSurface) -> Vec<f64> {
    let k = surface.k_tokens;
    let n_rows = surface.steps.len();
    let mut means = vec![0.0; k];
    for lag in 0..k {
        let col = k - 1 - lag;
        let mut acc = 0.0;
        let mut cnt = 0usize;
        for r in 0..n_rows {
            let v = surface.rows[r * k + col];
            if v != 0.0 {
                acc += mathx::abs(v);
                cnt += 1;
            }
        }
        means[lag] = if cnt > 0 { acc / cnt as f64 } else { 0.0 };
    }
    means
}

/// Mixer ablation modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum AblateMode {
    Swap,
    Zero,
    Randomize,
}

/// Layer selection for ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblateLayers {
    One(usize),
    All,
}

/// Replaces (swap), zeroes, or re-initializes the S6 parameter group —
/// A, S_B, S_C, S_delta, and the conv — of the chosen layer(s). All other
/// parameters are untouched; the result is a valid checkpoint with an
/// unchanged parameter count.
pub fn ablate_mixer(
    cfg: &ModelConfig,
    params: &ParamSet,
    mode: AblateMode,
    layers: AblateLayers,
    donor: Option<&ParamSet>,
    seed: u64,
) -> Result<ParamSet> {
    if matches!(cfg.block, crate::model::BlockKind::Attention) {
        return Err(Error::config("the attention baseline has no mixer group to ablate"));
    }
    let layer_list: Vec<usize> = match layers {
        AblateLayers::One(i) => {
            if i >= cfg.n_layers {
                return Err(Error::range(alloc::format!("layer {i} out of {}", cfg.n_layers)));
            }
            vec![i]
        }
        AblateLayers::All => (0..cfg.n_layers).collect(),
    };
    let fresh = match mode {
        AblateMode::Randomize => Some(init_params(cfg, seed)?),
        _ => None,
    };
    if matches!(mode, AblateMode::Swap) && donor.is_none() {
        return Err(Error::config("swap mode requires a donor checkpoint"));
    }
    let mut out = params.clone();
    for layer in layer_list {
        for name in cfg.mixer_group_names(layer) {
            let dst = out.values_mut(&name)?;
            match mode {
                AblateMode::Zero => dst.iter_mut().for_each(|v| *v = 0.0),
                AblateMode::Swap => {
                    let src = donor.unwrap().get(&name).map_err(|_| {
                        Error::config(alloc::format!("donor checkpoint lacks parameter `{name}`"))
                    })?;
                    if src.len() != dst.len() {
                        return Err(Error::config(alloc::format!("donor config mismatch at `{name}`")));
                    }
                    dst.copy_from_slice(src.data());
                }
                AblateMode::Randomize => {
                    dst.copy_from_slice(fresh.as_ref().unwrap().get(&name)?.data());
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_decay_recovers_exact_exponential() {
        let scores: Vec<f64> = (0..12).map(|lag| mathx::exp(-0.5 * lag as f64)).collect();
        let (slope, r2) = fit_decay(&scores).unwrap();
        assert!((slope + 0.5).abs() < 1e-9, "slope {slope}");
        assert!((r2 - 1.0).abs() < 1e-9);
        // Constant scores fit a zero slope.
        let (slope, _) = fit_decay(&[2.0; 8]).unwrap();
        assert!(slope.abs() < 1e-12);
        // Too few positive points is an error.
        assert!(fit_decay(&[1.0, 0.0, 0.0, -1.0]).is_err());
    }

    #[test]
    fn fuse_layers_identities() {
        let l = 3usize;
        let m = alloc::vec![1.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.2, 0.3, 0.5];
        // Mean of identical matrices is the matrix.
        let mean = fuse_layers(&[m.clone(), m.clone()], l, FuseMode::Mean).unwrap();
        assert_eq!(mean, m);
        // Single-layer rollout is the row-renormalized input.
        let roll = fuse_layers(&[m.clone()], l, FuseMode::Rollout).unwrap();
        for i in 0..l {
            let sum: f64 = roll[i * l..(i + 1) * l].iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        // Rollout of lower-triangular matrices stays lower-triangular.
        let roll2 = fuse_layers(&[m.clone(), m], l, FuseMode::Rollout).unwrap();
        for i in 0..l {
            for j in i + 1..l {
                assert_eq!(roll2[i * l + j], 0.0);
            }
        }
    }
}
