//! Stateful single-token inference.
//!
//! Each mixer layer carries a rolling conv buffer (the last `d_conv - 1`
//! stream rows) and the scan state `h`; one token goes through the stack
//! in O(1) time regardless of how much context the state has absorbed.
//! The arithmetic per token is the same, in the same order, as the
//! windowed forward pass, so outputs agree bit for bit with a windowed
//! pass over the full prefix. Attention blocks have no stepwise form here
//! and report an unsupported-mode error.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::mathx;
use crate::params::ParamSet;
use crate::ssm::{self, ScanState, TokenParams};
use crate::tensor::linear_forward;

use super::embed::{embed_token, RawToken};
use super::mixer::MixerRefs;
use super::norm::ln_forward;
use super::{BlockKind, ModelConfig};

/// Per-layer recurrent state.
#[derive(Debug, Clone)]
pub struct LayerState {
    /// Last (d_conv - 1) stream rows, oldest first; (d_conv-1) x d_inner.
    conv_buf: Vec<f64>,
    scan: ScanState<f64>,
}

/// Whole-stack recurrent state.
#[derive(Debug, Clone)]
pub struct RecurrentState {
    layers: Vec<LayerState>,
    /// Tokens consumed so far.
    pub tokens_seen: usize,
}

impl RecurrentState {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        if matches!(cfg.block, BlockKind::Attention) {
            return Err(Error::unsupported(
                "recurrent inference is not available for the attention baseline",
            ));
        }
        let di = cfg.d_inner();
        let layers = (0..cfg.n_layers)
            .map(|_| LayerState {
                conv_buf: vec![0.0; cfg.d_conv.saturating_sub(1) * di],
                scan: ScanState::zeros(di, cfg.d_state),
            })
            .collect();
        Ok(RecurrentState { layers, tokens_seen: 0 })
    }

    pub fn reset(&mut self) {
        for layer in &mut self.layers {
            layer.conv_buf.iter_mut().for_each(|v| *v = 0.0);
            layer.scan.h.iter_mut().for_each(|v| *v = 0.0);
            layer.scan.t = 0;
        }
        self.tokens_seen = 0;
    }
}

/// One mixer layer applied to a single token row (in/out `d_model`).
fn mixer_step(refs: &MixerRefs<'_>, state: &mut LayerState, x: &[f64]) -> Result<Vec<f64>> {
    let (d, di, n, r, dc) = (refs.d, refs.di, refs.n, refs.r, refs.dc);

    let mut normed = vec![0.0; d];
    ln_forward(x, 1, d, refs.ln_g, refs.ln_b, &mut normed);
    let mut proj = vec![0.0; 2 * di];
    linear_forward(&normed, 1, d, refs.in_proj, 2 * di, None, &mut proj);
    let (stream, gate) = proj.split_at(di);

    // Causal conv over the rolling buffer + current row, same tap order as
    // the windowed pass.
    let mut cv = vec![0.0; di];
    if refs.conv_enabled {
        cv.copy_from_slice(refs.conv_b);
        let hist = dc - 1;
        for k in 0..dc {
            let src: &[f64] = if k < hist { &state.conv_buf[k * di..(k + 1) * di] } else { stream };
            for dd in 0..di {
                cv[dd] += refs.conv_w[dd * dc + k] * src[dd];
            }
        }
        // Shift the buffer left and append the current stream row.
        if hist > 0 {
            state.conv_buf.copy_within(di.., 0);
            state.conv_buf[(hist - 1) * di..].copy_from_slice(stream);
        }
    } else {
        cv.copy_from_slice(stream);
    }

    let mut xh = vec![0.0; di];
    for dd in 0..di {
        xh[dd] = mathx::silu(cv[dd]);
    }

    let mut b_t = vec![0.0; n];
    let mut c_t = vec![0.0; n];
    linear_forward(&xh, 1, di, refs.b_proj, n, None, &mut b_t);
    linear_forward(&xh, 1, di, refs.c_proj, n, None, &mut c_t);
    let mut dt_low = vec![0.0; r];
    linear_forward(&xh, 1, di, refs.dt_lo, r, None, &mut dt_low);
    let mut dt_raw = vec![0.0; di];
    linear_forward(&dt_low, 1, r, refs.dt_up, di, Some(refs.dt_bias), &mut dt_raw);

    // Per-token discretization, same formulas/eval order as `discretize`.
    let mut a_bar = vec![0.0; di * n];
    let mut b_bar = vec![0.0; di * n];
    let a = refs.decode_a();
    for dd in 0..di {
        let dt = mathx::softplus(dt_raw[dd]);
        let ab = &mut a_bar[dd * n..(dd + 1) * n];
        for (o, &av) in ab.iter_mut().zip(&a[dd * n..(dd + 1) * n]) {
            *o = dt * av;
        }
        mathx::exp_inplace(ab);
        for nn in 0..n {
            b_bar[dd * n + nn] = dt * b_t[nn];
        }
    }

    let mut y_scan = vec![0.0; di];
    ssm::recurrent_step(
        &mut state.scan,
        TokenParams { a_bar: &a_bar, b_bar: &b_bar, c: &c_t },
        &xh,
        refs.d_skip,
        &mut y_scan,
    )?;

    let mut gated = vec![0.0; di];
    for dd in 0..di {
        gated[dd] = y_scan[dd] * mathx::silu(gate[dd]);
    }
    let mut out = vec![0.0; d];
    linear_forward(&gated, 1, di, refs.out_proj, d, None, &mut out);
    Ok(out)
}

/// Feed one raw token through the stack; returns the post-blocks hidden
/// row (apply [`super::predict_from_hidden`] at decision tokens).
pub fn step_token(
    cfg: &ModelConfig,
    params: &ParamSet,
    state: &mut RecurrentState,
    token: RawToken<'_>,
    timestep: usize,
) -> Result<Vec<f64>> {
    if matches!(cfg.block, BlockKind::Attention) {
        return Err(Error::unsupported(
            "recurrent inference is not available for the attention baseline",
        ));
    }
    if state.layers.len() != cfg.n_layers {
        return Err(Error::shape("recurrent state does not match the config layer count"));
    }
    let d = cfg.d_model;
    let mut x = embed_token(cfg, params, token, timestep)?;
    for layer in 0..cfg.n_layers {
        let refs = MixerRefs::resolve(cfg, params, layer)?;
        let mout = mixer_step(&refs, &mut state.layers[layer], &x)?;
        match cfg.block {
            BlockKind::PreUp => {
                for i in 0..d {
                    x[i] += mout[i];
                }
            }
            BlockKind::PostUp => {
                let mut z = x.clone();
                for i in 0..d {
                    z[i] += mout[i];
                }
                let gkey = |leaf: &str| alloc::format!("layers.{layer}.{leaf}");
                let mut x2 = vec![0.0; d];
                ln_forward(&z, 1, d, params.get(&gkey("ln2.g"))?.data(), params.get(&gkey("ln2.b"))?.data(), &mut x2);
                let w1 = params.get(&gkey("mlp.w1"))?.data();
                let b1 = params.get(&gkey("mlp.b1"))?.data();
                let w2 = params.get(&gkey("mlp.w2"))?.data();
                let b2 = params.get(&gkey("mlp.b2"))?.data();
                let dh = 4 * d;
                let mut h = vec![0.0; dh];
                linear_forward(&x2, 1, d, w1, dh, Some(b1), &mut h);
                for v in h.iter_mut() {
                    *v = v.max(0.0);
                }
                let mut fout = vec![0.0; d];
                linear_forward(&h, 1, dh, w2, d, Some(b2), &mut fout);
                for i in 0..d {
                    z[i] += fout[i];
                }
                x = z;
            }
            BlockKind::Attention => unreachable!(),
        }
    }
    state.tokens_seen += 1;
    Ok(x)
}
