//! Whole-model forward/backward over a token window: embedding, the block
//! stack, final LayerNorm, and the action head read at each timestep's
//! prediction token.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::WindowSample;
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::linear_forward;

use super::attn::{attn_backward, attn_forward, AttnCache, AttnRefs};
use super::embed::{embed_backward, embed_window, EmbedCache, TokenWindow};
use super::ffn::{ffn_backward, ffn_forward, FfnCache};
use super::mixer::{mixer_backward, mixer_forward, MixerCache, MixerRefs};
use super::norm::{ln_backward, ln_forward, LnCache};
use super::{BlockKind, ModelConfig};

/// Scan kernel precision. `F64` is the reference path; `F32` runs the
/// discretize+scan inner kernel in single precision (evaluation only,
/// looser tolerances).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F64,
    F32,
}

/// Per-forward options. Dropout requires an RNG; evaluation uses
/// [`ForwardOpts::eval`].
pub struct ForwardOpts<'r> {
    pub dropout: f64,
    pub rng: Option<&'r mut ChaCha8Rng>,
    pub precision: Precision,
}

impl ForwardOpts<'_> {
    pub fn eval() -> Self {
        ForwardOpts { dropout: 0.0, rng: None, precision: Precision::F64 }
    }

    pub fn eval_with(precision: Precision) -> Self {
        ForwardOpts { dropout: 0.0, rng: None, precision }
    }
}

/// Per-timestep action predictions (logits or continuous vectors).
#[derive(Debug, Clone)]
pub struct Predictions {
    pub k: usize,
    pub dim: usize,
    /// k x dim; zero rows at invalid (padded) slots.
    pub values: Vec<f64>,
    /// Which timestep slots are real.
    pub valid: Vec<bool>,
}

pub enum BlockCache {
    Pre {
        mixer: MixerCache,
        drop: Option<Vec<f64>>,
    },
    Post {
        mixer: MixerCache,
        drop1: Option<Vec<f64>>,
        ln2: LnCache,
        ffn: FfnCache,
        drop2: Option<Vec<f64>>,
    },
    Attn {
        attn: AttnCache,
        drop1: Option<Vec<f64>>,
        ln2: LnCache,
        ffn: FfnCache,
        drop2: Option<Vec<f64>>,
    },
}

pub struct ForwardCaches {
    pub tw: TokenWindow,
    pub embed: EmbedCache,
    pub embed_drop: Option<Vec<f64>>,
    /// xs[i] is the input of block i; xs[n_layers] is the stack output.
    pub xs: Vec<Vec<f64>>,
    pub blocks: Vec<BlockCache>,
    pub ln_f: LnCache,
    /// Final LayerNorm output, l_tok x d.
    pub xf: Vec<f64>,
    pub preds: Predictions,
}

fn dropout_mask(len: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..len).map(|_| if rng.gen_range(0.0..1.0) < p { 0.0 } else { keep }).collect()
}

fn apply_drop(x: &mut [f64], factors: &Option<Vec<f64>>) {
    if let Some(f) = factors {
        for (v, s) in x.iter_mut().zip(f) {
            *v *= s;
        }
    }
}

/// Full forward with caches. The reference path for training, evaluation,
/// analysis, and benchmarking alike.
pub fn forward_window(
    cfg: &ModelConfig,
    params: &ParamSet,
    window: &WindowSample,
    mut opts: ForwardOpts<'_>,
) -> Result<ForwardCaches> {
    cfg.validate()?;
    if opts.dropout > 0.0 && opts.rng.is_none() {
        return Err(Error::config("dropout requires an RNG"));
    }
    if opts.dropout >= 1.0 || opts.dropout < 0.0 {
        return Err(Error::config("dropout must lie in [0, 1)"));
    }
    let (tw, embed) = embed_window(cfg, params, window)?;
    let l = tw.l_tok;
    let d = cfg.d_model;
    let p = opts.dropout;

    let mut x0 = tw.tokens.clone();
    let embed_drop = if p > 0.0 {
        let m = dropout_mask(l * d, p, opts.rng.as_deref_mut().unwrap());
        apply_drop(&mut x0, &Some(m.clone()));
        Some(m)
    } else {
        None
    };

    let mut xs = Vec::with_capacity(cfg.n_layers + 1);
    xs.push(x0);
    let mut blocks = Vec::with_capacity(cfg.n_layers);
    for layer in 0..cfg.n_layers {
        let x = xs.last().unwrap().clone();
        match cfg.block {
            BlockKind::PreUp => {
                let refs = MixerRefs::resolve(cfg, params, layer)?;
                let mut mout = vec![0.0; l * d];
                let mcache = mixer_forward(&refs, &x, l, &tw.mask, opts.precision, &mut mout)?;
                let drop = if p > 0.0 {
                    let m = dropout_mask(l * d, p, opts.rng.as_deref_mut().unwrap());
                    apply_drop(&mut mout, &Some(m.clone()));
                    Some(m)
                } else {
                    None
                };
                let mut x_next = x;
                crate::tensor::axpy(1.0, &mout, &mut x_next);
                xs.push(x_next);
                blocks.push(BlockCache::Pre { mixer: mcache, drop });
            }
            BlockKind::PostUp | BlockKind::Attention => {
                let (mix_out, mix_cache) = match cfg.block {
                    BlockKind::PostUp => {
                        let refs = MixerRefs::resolve(cfg, params, layer)?;
                        let mut mout = vec![0.0; l * d];
                        let c = mixer_forward(&refs, &x, l, &tw.mask, opts.precision, &mut mout)?;
                        (mout, BlockHalf::Mixer(c))
                    }
                    _ => {
                        let refs = AttnRefs::resolve(cfg, params, layer)?;
                        let mut aout = vec![0.0; l * d];
                        let c = attn_forward(&refs, &x, l, &tw.mask, &mut aout)?;
                        (aout, BlockHalf::Attn(c))
                    }
                };
                let mut mout = mix_out;
                let drop1 = if p > 0.0 {
                    let m = dropout_mask(l * d, p, opts.rng.as_deref_mut().unwrap());
                    apply_drop(&mut mout, &Some(m.clone()));
                    Some(m)
                } else {
                    None
                };
                let mut z = x;
                crate::tensor::axpy(1.0, &mout, &mut z);

                let gkey = |leaf: &str| alloc::format!("layers.{layer}.{leaf}");
                let ln2_g = params.get(&gkey("ln2.g"))?.data();
                let ln2_b = params.get(&gkey("ln2.b"))?.data();
                let mut x2 = vec![0.0; l * d];
                let ln2 = ln_forward(&z, l, d, ln2_g, ln2_b, &mut x2);
                for t in 0..l {
                    if !tw.mask[t] {
                        x2[t * d..(t + 1) * d].iter_mut().for_each(|v| *v = 0.0);
                    }
                }
                let w1 = params.get(&gkey("mlp.w1"))?.data();
                let b1 = params.get(&gkey("mlp.b1"))?.data();
                let w2 = params.get(&gkey("mlp.w2"))?.data();
                let b2 = params.get(&gkey("mlp.b2"))?.data();
                let mut fout = vec![0.0; l * d];
                let ffn = ffn_forward(&x2, l, d, w1, b1, w2, b2, &tw.mask, &mut fout);
                let drop2 = if p > 0.0 {
                    let m = dropout_mask(l * d, p, opts.rng.as_deref_mut().unwrap());
                    apply_drop(&mut fout, &Some(m.clone()));
                    Some(m)
                } else {
                    None
                };
                let mut x_next = z;
                crate::tensor::axpy(1.0, &fout, &mut x_next);
                xs.push(x_next);
                match mix_cache {
                    BlockHalf::Mixer(mixer) => blocks.push(BlockCache::Post { mixer, drop1, ln2, ffn, drop2 }),
                    BlockHalf::Attn(attn) => blocks.push(BlockCache::Attn { attn, drop1, ln2, ffn, drop2 }),
                }
            }
        }
    }

    // Final norm + head at the prediction tokens.
    let lnf_g = params.get("ln_f.g")?.data();
    let lnf_b = params.get("ln_f.b")?.data();
    let mut xf = vec![0.0; l * d];
    let ln_f = ln_forward(xs.last().unwrap(), l, d, lnf_g, lnf_b, &mut xf);
    let ao = cfg.action_space.output_dim();
    let head_w = params.get("head.w")?.data();
    let head_b = params.get("head.b")?.data();
    let k = window.k;
    let mut preds = Predictions { k, dim: ao, values: vec![0.0; k * ao], valid: tw.step_mask.clone() };
    for slot in 0..k {
        if !tw.step_mask[slot] {
            continue;
        }
        let idx = tw.pred_token_idx[slot];
        linear_forward(&xf[idx * d..(idx + 1) * d], 1, d, head_w, ao, Some(head_b), &mut preds.values[slot * ao..(slot + 1) * ao]);
    }

    Ok(ForwardCaches { tw, embed, embed_drop, xs, blocks, ln_f, xf, preds })
}

enum BlockHalf {
    Mixer(MixerCache),
    Attn(AttnCache),
}

/// Forward without training caches exposed: returns the predictions only.
pub fn policy_forward(cfg: &ModelConfig, params: &ParamSet, window: &WindowSample) -> Result<Predictions> {
    Ok(forward_window(cfg, params, window, ForwardOpts::eval())?.preds)
}

/// Final LayerNorm + head for a single hidden row (recurrent inference).
pub fn predict_from_hidden(cfg: &ModelConfig, params: &ParamSet, hidden: &[f64]) -> Result<Vec<f64>> {
    let d = cfg.d_model;
    let ao = cfg.action_space.output_dim();
    let mut xf = vec![0.0; d];
    ln_forward(hidden, 1, d, params.get("ln_f.g")?.data(), params.get("ln_f.b")?.data(), &mut xf);
    let mut out = vec![0.0; ao];
    linear_forward(&xf, 1, d, params.get("head.w")?.data(), ao, Some(params.get("head.b")?.data()), &mut out);
    Ok(out)
}

/// Backward through the whole stack given prediction gradients
/// (k x act_dim, zero rows at invalid slots). Accumulates into `grads`.
pub fn backward_window(
    cfg: &ModelConfig,
    params: &ParamSet,
    window: &WindowSample,
    caches: &ForwardCaches,
    g_preds: &[f64],
    grads: &mut ParamSet,
) -> Result<()> {
    let l = caches.tw.l_tok;
    let d = cfg.d_model;
    let ao = cfg.action_space.output_dim();
    debug_assert_eq!(g_preds.len(), window.k * ao);

    // Head.
    let mut g_xf = vec![0.0; l * d];
    {
        let head_w = params.get("head.w")?.data();
        let mut g_head_w = vec![0.0; head_w.len()];
        let mut g_head_b = vec![0.0; ao];
        for slot in 0..window.k {
            if !caches.tw.step_mask[slot] {
                continue;
            }
            let idx = caches.tw.pred_token_idx[slot];
            let gy = &g_preds[slot * ao..(slot + 1) * ao];
            let xfr = &caches.xf[idx * d..(idx + 1) * d];
            for o in 0..ao {
                crate::tensor::axpy(gy[o], xfr, &mut g_head_w[o * d..(o + 1) * d]);
                crate::tensor::axpy(gy[o], &head_w[o * d..(o + 1) * d], &mut g_xf[idx * d..(idx + 1) * d]);
                g_head_b[o] += gy[o];
            }
        }
        crate::tensor::axpy(1.0, &g_head_w, grads.values_mut("head.w")?);
        crate::tensor::axpy(1.0, &g_head_b, grads.values_mut("head.b")?);
    }

    // Final norm.
    let mut g_x = vec![0.0; l * d];
    {
        let lnf_g = params.get("ln_f.g")?.data();
        let mut gg = vec![0.0; d];
        let mut gb = vec![0.0; d];
        ln_backward(&caches.ln_f, lnf_g, &g_xf, &mut g_x, &mut gg, &mut gb);
        crate::tensor::axpy(1.0, &gg, grads.values_mut("ln_f.g")?);
        crate::tensor::axpy(1.0, &gb, grads.values_mut("ln_f.b")?);
    }

    // Blocks in reverse.
    for layer in (0..cfg.n_layers).rev() {
        match &caches.blocks[layer] {
            BlockCache::Pre { mixer, drop } => {
                let refs = MixerRefs::resolve(cfg, params, layer)?;
                let mut g_mout = g_x.clone();
                apply_drop(&mut g_mout, drop);
                // Residual: dL/dx gets g_x plus the mixer's input grad.
                let mg = mixer_backward(&refs, mixer, &caches.tw.mask, &g_mout, &mut g_x)?;
                mg.commit(layer, refs.conv_enabled, grads)?;
            }
            block @ (BlockCache::Post { .. } | BlockCache::Attn { .. }) => {
                let (drop1, ln2, ffn, drop2) = match block {
                    BlockCache::Post { drop1, ln2, ffn, drop2, .. } => (drop1, ln2, ffn, drop2),
                    BlockCache::Attn { drop1, ln2, ffn, drop2, .. } => (drop1, ln2, ffn, drop2),
                    _ => unreachable!(),
                };
                // MLP half: x_next = z + dropout(MLP(LN2(z) ⊙ mask)).
                let gkey = |leaf: &str| alloc::format!("layers.{layer}.{leaf}");
                let w1 = params.get(&gkey("mlp.w1"))?.data();
                let w2 = params.get(&gkey("mlp.w2"))?.data();
                let mut g_fout = g_x.clone();
                apply_drop(&mut g_fout, drop2);
                let mut g_x2 = vec![0.0; l * d];
                let fg = ffn_backward(ffn, l, d, w1, w2, &caches.tw.mask, &g_fout, &mut g_x2);
                crate::tensor::axpy(1.0, &fg.w1, grads.values_mut(&gkey("mlp.w1"))?);
                crate::tensor::axpy(1.0, &fg.b1, grads.values_mut(&gkey("mlp.b1"))?);
                crate::tensor::axpy(1.0, &fg.w2, grads.values_mut(&gkey("mlp.w2"))?);
                crate::tensor::axpy(1.0, &fg.b2, grads.values_mut(&gkey("mlp.b2"))?);
                for t in 0..l {
                    if !caches.tw.mask[t] {
                        g_x2[t * d..(t + 1) * d].iter_mut().for_each(|v| *v = 0.0);
                    }
                }
                // g_x holds dL/dz via the residual; add the LN2 path.
                let ln2_g = params.get(&gkey("ln2.g"))?.data();
                let mut gg = vec![0.0; d];
                let mut gb = vec![0.0; d];
                ln_backward(ln2, ln2_g, &g_x2, &mut g_x, &mut gg, &mut gb);
                crate::tensor::axpy(1.0, &gg, grads.values_mut(&gkey("ln2.g"))?);
                crate::tensor::axpy(1.0, &gb, grads.values_mut(&gkey("ln2.b"))?);

                // Mixer half: z = x + dropout(mixer(x)).
                let mut g_mout = g_x.clone();
                apply_drop(&mut g_mout, drop1);
                match block {
                    BlockCache::Post { mixer, .. } => {
                        let refs = MixerRefs::resolve(cfg, params, layer)?;
                        let mg = mixer_backward(&refs, mixer, &caches.tw.mask, &g_mout, &mut g_x)?;
                        mg.commit(layer, refs.conv_enabled, grads)?;
                    }
                    BlockCache::Attn { attn, .. } => {
                        let refs = AttnRefs::resolve(cfg, params, layer)?;
                        let ag = attn_backward(&refs, attn, &caches.tw.mask, &g_mout, &mut g_x)?;
                        ag.commit(layer, grads)?;
                    }
                    _ => unreachable!(),
                }
            }
        }
    }

    // Embedding.
    let mut g_tokens = g_x;
    apply_drop(&mut g_tokens, &caches.embed_drop);
    embed_backward(cfg, params, window, &caches.tw, &caches.embed, &g_tokens, grads)
}
