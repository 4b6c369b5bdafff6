//! Token embedding for both concatenation schemes.
//!
//! Each modality has its own linear embedding into `d_model`. Under
//! `B3LD` a timestep becomes three tokens in the order (rtg, state,
//! action); under `BL3D` the rtg, state, and *previous* action embeddings
//! are concatenated and projected back to `d_model`, one token per
//! timestep, so the fused token is available before the action is chosen.
//! An optional learned table adds the same global-timestep embedding to
//! every token of a timestep. Masked (padded) positions carry exactly
//! zero embeddings.

use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::WindowSample;
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::{linear_backward, linear_forward};

use super::{Concat, ModelConfig};

/// An embedded, masked window of `l_tok` tokens.
#[derive(Debug, Clone)]
pub struct TokenWindow {
    pub l_tok: usize,
    pub d_model: usize,
    /// l_tok x d_model.
    pub tokens: Vec<f64>,
    /// Token-level mask (true = real token).
    pub mask: Vec<bool>,
    /// For each of the K timestep slots, the token index whose output
    /// carries the action prediction (state token / fused token).
    pub pred_token_idx: Vec<usize>,
    /// Timestep-slot mask (true = real timestep).
    pub step_mask: Vec<bool>,
    /// Global timestep of each token (for the position table).
    pub token_timestep: Vec<usize>,
}

/// Backward-pass cache: the pre-fusion concatenated embeddings (BL3D only).
#[derive(Debug, Clone, Default)]
pub struct EmbedCache {
    /// K x 3*d_model.
    pub concat: Vec<f64>,
}

/// One raw token for single-step (recurrent) inference.
#[derive(Debug, Clone, Copy)]
pub enum RawToken<'a> {
    Rtg(f64),
    State(&'a [f64]),
    Action(&'a [f64]),
    /// Fused-scheme token: (rtg, state, previous action).
    Fused { rtg: f64, state: &'a [f64], prev_action: &'a [f64] },
}

fn embed_linear(params: &ParamSet, w: &str, b: &str, feat: &[f64], out: &mut [f64]) -> Result<()> {
    let w = params.get(w)?;
    let b = params.get(b)?;
    let d = out.len();
    if w.shape() != [d, feat.len()] {
        return Err(Error::shape(alloc::format!(
            "embedding weight {} expected shape [{d}, {}]",
            w.shape_string(),
            feat.len()
        )));
    }
    linear_forward(feat, 1, feat.len(), w.data(), d, Some(b.data()), out);
    Ok(())
}

fn add_pos(cfg: &ModelConfig, params: &ParamSet, timestep: usize, out: &mut [f64]) -> Result<()> {
    if !cfg.position_embedding {
        return Ok(());
    }
    if timestep >= cfg.max_ep_len {
        return Err(Error::range(alloc::format!(
            "timestep {timestep} >= max episode length {}",
            cfg.max_ep_len
        )));
    }
    let pos = params.get("embed.pos")?;
    let d = cfg.d_model;
    for (o, p) in out.iter_mut().zip(&pos.data()[timestep * d..(timestep + 1) * d]) {
        *o += p;
    }
    Ok(())
}

/// Embed a single raw token (the recurrent-mode entry point). Bitwise
/// identical to the matching token of [`embed_window`].
pub fn embed_token(cfg: &ModelConfig, params: &ParamSet, token: RawToken<'_>, timestep: usize) -> Result<Vec<f64>> {
    if timestep >= cfg.max_ep_len {
        return Err(Error::range(alloc::format!(
            "timestep {timestep} >= max episode length {}",
            cfg.max_ep_len
        )));
    }
    let d = cfg.d_model;
    let mut out = vec![0.0; d];
    match token {
        RawToken::Rtg(r) => embed_linear(params, "embed.rtg.w", "embed.rtg.b", &[r], &mut out)?,
        RawToken::State(s) => embed_linear(params, "embed.state.w", "embed.state.b", s, &mut out)?,
        RawToken::Action(a) => embed_linear(params, "embed.action.w", "embed.action.b", a, &mut out)?,
        RawToken::Fused { rtg, state, prev_action } => {
            let mut concat = vec![0.0; 3 * d];
            embed_linear(params, "embed.rtg.w", "embed.rtg.b", &[rtg], &mut concat[..d])?;
            embed_linear(params, "embed.state.w", "embed.state.b", state, &mut concat[d..2 * d])?;
            embed_linear(params, "embed.action.w", "embed.action.b", prev_action, &mut concat[2 * d..])?;
            let w = params.get("embed.fuse.w")?;
            let b = params.get("embed.fuse.b")?;
            linear_forward(&concat, 1, 3 * d, w.data(), d, Some(b.data()), &mut out);
        }
    }
    add_pos(cfg, params, timestep, &mut out)?;
    Ok(out)
}

/// Embed a window of (rtg, state, action, timestep) tuples.
pub fn embed_window(
    cfg: &ModelConfig,
    params: &ParamSet,
    window: &WindowSample,
) -> Result<(TokenWindow, EmbedCache)> {
    if window.state_dim != cfg.state_dim || window.act_dim != cfg.action_space.input_dim() {
        return Err(Error::shape("window modality dims do not match model config"));
    }
    let k = window.k;
    let d = cfg.d_model;
    let tps = cfg.tokens_per_step();
    let l_tok = k * tps;
    let mut tw = TokenWindow {
        l_tok,
        d_model: d,
        tokens: vec![0.0; l_tok * d],
        mask: vec![false; l_tok],
        pred_token_idx: vec![0; k],
        step_mask: window.mask.clone(),
        token_timestep: vec![0; l_tok],
    };
    let mut cache = EmbedCache::default();
    if matches!(cfg.concat, Concat::Bl3d) {
        cache.concat = vec![0.0; k * 3 * d];
    }
    for slot in 0..k {
        match cfg.concat {
            Concat::B3ld => tw.pred_token_idx[slot] = 3 * slot + 1,
            Concat::Bl3d => tw.pred_token_idx[slot] = slot,
        }
        if !window.mask[slot] {
            continue; // padded: tokens stay zero, mask stays false
        }
        let ts = window.timesteps[slot];
        let sd = window.state_dim;
        let ad = window.act_dim;
        let state = &window.states[slot * sd..(slot + 1) * sd];
        match cfg.concat {
            Concat::B3ld => {
                let act = &window.act_inputs[slot * ad..(slot + 1) * ad];
                let base = 3 * slot;
                let t0 = embed_token(cfg, params, RawToken::Rtg(window.rtgs[slot]), ts)?;
                let t1 = embed_token(cfg, params, RawToken::State(state), ts)?;
                let t2 = embed_token(cfg, params, RawToken::Action(act), ts)?;
                tw.tokens[base * d..(base + 1) * d].copy_from_slice(&t0);
                tw.tokens[(base + 1) * d..(base + 2) * d].copy_from_slice(&t1);
                tw.tokens[(base + 2) * d..(base + 3) * d].copy_from_slice(&t2);
                for j in 0..3 {
                    tw.mask[base + j] = true;
                    tw.token_timestep[base + j] = ts;
                }
            }
            Concat::Bl3d => {
                let prev = &window.prev_act_inputs[slot * ad..(slot + 1) * ad];
                // Recompute the concat here so the cache holds it.
                let cc = &mut cache.concat[slot * 3 * d..(slot + 1) * 3 * d];
                embed_linear(params, "embed.rtg.w", "embed.rtg.b", &[window.rtgs[slot]], &mut cc[..d])?;
                embed_linear(params, "embed.state.w", "embed.state.b", state, &mut cc[d..2 * d])?;
                embed_linear(params, "embed.action.w", "embed.action.b", prev, &mut cc[2 * d..])?;
                let w = params.get("embed.fuse.w")?;
                let b = params.get("embed.fuse.b")?;
                let cc = &cache.concat[slot * 3 * d..(slot + 1) * 3 * d];
                linear_forward(cc, 1, 3 * d, w.data(), d, Some(b.data()), &mut tw.tokens[slot * d..(slot + 1) * d]);
                add_pos(cfg, params, ts, &mut tw.tokens[slot * d..(slot + 1) * d])?;
                tw.mask[slot] = true;
                tw.token_timestep[slot] = ts;
            }
        }
    }
    Ok((tw, cache))
}

/// Embedding backward: scatters token gradients into the embedding
/// parameters. `g_tokens` is l_tok x d_model; masked tokens carry zeros.
pub fn embed_backward(
    cfg: &ModelConfig,
    params: &ParamSet,
    window: &WindowSample,
    tw: &TokenWindow,
    cache: &EmbedCache,
    g_tokens: &[f64],
    grads: &mut ParamSet,
) -> Result<()> {
    let d = cfg.d_model;
    let k = window.k;
    let sd = window.state_dim;
    let ad = window.act_dim;

    // Position table gradient first (shared by both schemes).
    if cfg.position_embedding {
        let gpos = grads.values_mut("embed.pos")?;
        for tok in 0..tw.l_tok {
            if !tw.mask[tok] {
                continue;
            }
            let ts = tw.token_timestep[tok];
            for i in 0..d {
                gpos[ts * d + i] += g_tokens[tok * d + i];
            }
        }
    }

    let scatter = |wname: &str, bname: &str, feat: &[f64], gy: &[f64], grads: &mut ParamSet| -> Result<()> {
        {
            let gw = grads.values_mut(wname)?;
            for o in 0..d {
                crate::tensor::axpy(gy[o], feat, &mut gw[o * feat.len()..(o + 1) * feat.len()]);
            }
        }
        let gb = grads.values_mut(bname)?;
        crate::tensor::axpy(1.0, gy, gb);
        Ok(())
    };

    for slot in 0..k {
        if !window.mask[slot] {
            continue;
        }
        let state = &window.states[slot * sd..(slot + 1) * sd];
        match cfg.concat {
            Concat::B3ld => {
                let base = 3 * slot;
                let act = &window.act_inputs[slot * ad..(slot + 1) * ad];
                scatter("embed.rtg.w", "embed.rtg.b", &[window.rtgs[slot]], &g_tokens[base * d..(base + 1) * d], grads)?;
                scatter(
                    "embed.state.w",
                    "embed.state.b",
                    state,
                    &g_tokens[(base + 1) * d..(base + 2) * d],
                    grads,
                )?;
                scatter(
                    "embed.action.w",
                    "embed.action.b",
                    act,
                    &g_tokens[(base + 2) * d..(base + 3) * d],
                    grads,
                )?;
            }
            Concat::Bl3d => {
                let prev = &window.prev_act_inputs[slot * ad..(slot + 1) * ad];
                let cc = &cache.concat[slot * 3 * d..(slot + 1) * 3 * d];
                let gy = &g_tokens[slot * d..(slot + 1) * d];
                let mut gcc = vec![0.0; 3 * d];
                {
                    let fuse_w = params.get("embed.fuse.w")?;
                    let mut gw = GradBuf::borrow(grads, "embed.fuse.w")?;
                    linear_backward(gy, cc, 1, 3 * d, fuse_w.data(), d, Some(&mut gcc), Some(gw.as_mut()), None);
                    gw.commit(grads, "embed.fuse.w")?;
                }
                {
                    let gb = grads.values_mut("embed.fuse.b")?;
                    crate::tensor::axpy(1.0, gy, gb);
                }
                scatter("embed.rtg.w", "embed.rtg.b", &[window.rtgs[slot]], &gcc[..d], grads)?;
                scatter("embed.state.w", "embed.state.b", state, &gcc[d..2 * d], grads)?;
                scatter("embed.action.w", "embed.action.b", prev, &gcc[2 * d..], grads)?;
            }
        }
    }
    Ok(())
}

// Small helper to accumulate into a grad tensor through a temporary buffer
// (avoids aliasing params and grads borrows in linear_backward calls).
struct GradBuf {
    buf: Vec<f64>,
}

impl GradBuf {
    fn borrow(grads: &ParamSet, name: &str) -> Result<Self> {
        Ok(GradBuf { buf: vec![0.0; grads.get(name)?.len()] })
    }

    fn as_mut(&mut self) -> &mut [f64] {
        &mut self.buf
    }

    fn commit(self, grads: &mut ParamSet, name: &str) -> Result<()> {
        let g = grads.values_mut(name)?;
        crate::tensor::axpy(1.0, &self.buf, g);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::tiny_config;
    use super::*;
    use crate::dataset::Targets;
    use crate::model::{init_params, BlockKind};

    pub(crate) fn full_window(cfg: &ModelConfig, k: usize) -> WindowSample {
        let sd = cfg.state_dim;
        let ad = cfg.action_space.input_dim();
        WindowSample {
            k,
            state_dim: sd,
            act_dim: ad,
            rtgs: (0..k).map(|i| 1.0 - i as f64 * 0.05).collect(),
            states: (0..k * sd).map(|i| (i as f64 * 0.37).sin()).collect(),
            act_inputs: (0..k * ad).map(|i| if i % ad == i / ad % ad { 1.0 } else { 0.0 }).collect(),
            prev_act_inputs: (0..k * ad).map(|i| if i % ad == 0 { 1.0 } else { 0.0 }).collect(),
            timesteps: (0..k).collect(),
            mask: vec![true; k],
            targets: Targets::Discrete(vec![0; k]),
        }
    }

    #[test]
    fn b3ld_produces_three_tokens_per_step() {
        let cfg = tiny_config(BlockKind::PreUp, Concat::B3ld);
        let params = init_params(&cfg, 0).unwrap();
        let (tw, _) = embed_window(&cfg, &params, &full_window(&cfg, 4)).unwrap();
        assert_eq!(tw.l_tok, 12);
        assert_eq!(tw.pred_token_idx, vec![1, 4, 7, 10]);
        assert!(tw.mask.iter().all(|m| *m));
    }

    #[test]
    fn bl3d_produces_one_token_per_step() {
        let cfg = tiny_config(BlockKind::PreUp, Concat::Bl3d);
        let params = init_params(&cfg, 0).unwrap();
        let (tw, _) = embed_window(&cfg, &params, &full_window(&cfg, 4)).unwrap();
        assert_eq!(tw.l_tok, 4);
        assert_eq!(tw.pred_token_idx, vec![0, 1, 2, 3]);
    }

    #[test]
    fn masked_positions_are_zero() {
        let cfg = tiny_config(BlockKind::PreUp, Concat::B3ld);
        let params = init_params(&cfg, 0).unwrap();
        let mut w = full_window(&cfg, 8);
        for slot in 0..3 {
            w.mask[slot] = false;
        }
        let (tw, _) = embed_window(&cfg, &params, &w).unwrap();
        assert_eq!(tw.mask.iter().filter(|m| !**m).count(), 9);
        assert!(tw.tokens[..9 * cfg.d_model].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn timestep_beyond_table_is_a_range_error() {
        let mut cfg = tiny_config(BlockKind::PreUp, Concat::B3ld);
        cfg.position_embedding = true;
        let params = init_params(&cfg, 0).unwrap();
        let mut w = full_window(&cfg, 4);
        w.timesteps[2] = cfg.max_ep_len;
        assert!(matches!(embed_window(&cfg, &params, &w), Err(Error::Range(_))));
    }

    #[test]
    fn embed_token_matches_window_tokens() {
        for concat in [Concat::B3ld, Concat::Bl3d] {
            let cfg = tiny_config(BlockKind::PreUp, concat);
            let params = init_params(&cfg, 3).unwrap();
            let w = full_window(&cfg, 4);
            let (tw, _) = embed_window(&cfg, &params, &w).unwrap();
            let d = cfg.d_model;
            let slot = 2;
            match concat {
                Concat::B3ld => {
                    let tok = embed_token(&cfg, &params, RawToken::Rtg(w.rtgs[slot]), w.timesteps[slot]).unwrap();
                    assert_eq!(&tw.tokens[(3 * slot) * d..(3 * slot + 1) * d], tok.as_slice());
                }
                Concat::Bl3d => {
                    let sd = cfg.state_dim;
                    let ad = cfg.action_space.input_dim();
                    let tok = embed_token(
                        &cfg,
                        &params,
                        RawToken::Fused {
                            rtg: w.rtgs[slot],
                            state: &w.states[slot * sd..(slot + 1) * sd],
                            prev_action: &w.prev_act_inputs[slot * ad..(slot + 1) * ad],
                        },
                        w.timesteps[slot],
                    )
                    .unwrap();
                    assert_eq!(&tw.tokens[slot * d..(slot + 1) * d], tok.as_slice());
                }
            }
        }
    }
}
