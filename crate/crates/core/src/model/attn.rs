//! Pre-LN causal multi-head self-attention mixer (the transformer
//! baseline's token mixer; the MLP sub-block lives in `ffn`).
//!
//! scores = q k^T / sqrt(d_k), masked to the lower triangle and to real
//! key positions, softmax per row, then probs·v and an output projection.
//! Rows at masked (padded) positions are skipped entirely and forced to
//! zero.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::mathx;
use crate::params::ParamSet;
use crate::tensor::{dot, linear_backward, linear_forward};

use super::norm::{ln_backward, ln_forward, LnCache};
use super::ModelConfig;

pub struct AttnRefs<'a> {
    pub d: usize,
    pub n_heads: usize,
    pub ln_g: &'a [f64],
    pub ln_b: &'a [f64],
    pub wq: &'a [f64],
    pub wk: &'a [f64],
    pub wv: &'a [f64],
    pub wo: &'a [f64],
}

impl<'a> AttnRefs<'a> {
    pub fn resolve(cfg: &ModelConfig, params: &'a ParamSet, layer: usize) -> Result<Self> {
        let g = |leaf: &str| params.get(&alloc::format!("layers.{layer}.{leaf}"));
        Ok(AttnRefs {
            d: cfg.d_model,
            n_heads: cfg.n_heads,
            ln_g: g("ln1.g")?.data(),
            ln_b: g("ln1.b")?.data(),
            wq: g("attn.wq")?.data(),
            wk: g("attn.wk")?.data(),
            wv: g("attn.wv")?.data(),
            wo: g("attn.wo")?.data(),
        })
    }
}

pub struct AttnCache {
    pub l: usize,
    pub ln: LnCache,
    /// Masked LN output, l x d.
    pub normed: Vec<f64>,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// Softmax rows per head, n_heads x l x l (zero at skipped positions).
    pub probs: Vec<f64>,
    /// Concatenated head outputs (OutProj input), l x d.
    pub ctx: Vec<f64>,
}

/// Attention sub-block forward; writes the (masked) mixer contribution.
pub fn attn_forward(
    refs: &AttnRefs<'_>,
    x: &[f64],
    l: usize,
    mask: &[bool],
    out: &mut [f64],
) -> Result<AttnCache> {
    let d = refs.d;
    let nh = refs.n_heads;
    let dh = d / nh;
    let scale = 1.0 / mathx::sqrt(dh as f64);

    let mut normed = vec![0.0; l * d];
    let ln = ln_forward(x, l, d, refs.ln_g, refs.ln_b, &mut normed);
    for t in 0..l {
        if !mask[t] {
            normed[t * d..(t + 1) * d].iter_mut().for_each(|v| *v = 0.0);
        }
    }

    let mut q = vec![0.0; l * d];
    let mut k = vec![0.0; l * d];
    let mut v = vec![0.0; l * d];
    linear_forward(&normed, l, d, refs.wq, d, None, &mut q);
    linear_forward(&normed, l, d, refs.wk, d, None, &mut k);
    linear_forward(&normed, l, d, refs.wv, d, None, &mut v);

    let mut probs = vec![0.0; nh * l * l];
    let mut ctx = vec![0.0; l * d];
    let mut row = vec![0.0; l];
    for h in 0..nh {
        let off = h * dh;
        for i in 0..l {
            if !mask[i] {
                continue;
            }
            let qi = &q[i * d + off..i * d + off + dh];
            let mut max_s = f64::NEG_INFINITY;
            for (j, r) in row.iter_mut().enumerate().take(i + 1) {
                if mask[j] {
                    let s = scale * dot(qi, &k[j * d + off..j * d + off + dh]);
                    *r = s;
                    if s > max_s {
                        max_s = s;
                    }
                } else {
                    *r = f64::NEG_INFINITY;
                }
            }
            let mut denom = 0.0;
            for r in row.iter_mut().take(i + 1) {
                if r.is_finite() {
                    *r = mathx::exp(*r - max_s);
                    denom += *r;
                } else {
                    *r = 0.0;
                }
            }
            let p_row = &mut probs[(h * l + i) * l..(h * l + i + 1) * l];
            let c_row = &mut ctx[i * d + off..i * d + off + dh];
            for j in 0..=i {
                let p = row[j] / denom;
                p_row[j] = p;
                if p != 0.0 {
                    crate::tensor::axpy(p, &v[j * d + off..j * d + off + dh], c_row);
                }
            }
        }
    }

    linear_forward(&ctx, l, d, refs.wo, d, None, out);
    for t in 0..l {
        if !mask[t] {
            out[t * d..(t + 1) * d].iter_mut().for_each(|v| *v = 0.0);
        }
    }
    Ok(AttnCache { l, ln, normed, q, k, v, probs, ctx })
}

pub struct AttnGrads {
    pub ln_g: Vec<f64>,
    pub ln_b: Vec<f64>,
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Vec<f64>,
}

impl AttnGrads {
    pub fn commit(self, layer: usize, grads: &mut ParamSet) -> Result<()> {
        let mut add = |leaf: &str, v: &[f64]| -> Result<()> {
            let g = grads.values_mut(&alloc::format!("layers.{layer}.{leaf}"))?;
            crate::tensor::axpy(1.0, v, g);
            Ok(())
        };
        add("ln1.g", &self.ln_g)?;
        add("ln1.b", &self.ln_b)?;
        add("attn.wq", &self.wq)?;
        add("attn.wk", &self.wk)?;
        add("attn.wv", &self.wv)?;
        add("attn.wo", &self.wo)?;
        Ok(())
    }
}

pub fn attn_backward(
    refs: &AttnRefs<'_>,
    cache: &AttnCache,
    mask: &[bool],
    g_out: &[f64],
    gx: &mut [f64],
) -> Result<AttnGrads> {
    let d = refs.d;
    let nh = refs.n_heads;
    let dh = d / nh;
    let l = cache.l;
    let scale = 1.0 / mathx::sqrt(dh as f64);

    let mut g_out_masked = g_out.to_vec();
    for t in 0..l {
        if !mask[t] {
            g_out_masked[t * d..(t + 1) * d].iter_mut().for_each(|v| *v = 0.0);
        }
    }

    let mut g = AttnGrads {
        ln_g: vec![0.0; d],
        ln_b: vec![0.0; d],
        wq: vec![0.0; d * d],
        wk: vec![0.0; d * d],
        wv: vec![0.0; d * d],
        wo: vec![0.0; d * d],
    };

    let mut g_ctx = vec![0.0; l * d];
    linear_backward(&g_out_masked, &cache.ctx, l, d, refs.wo, d, Some(&mut g_ctx), Some(&mut g.wo), None);

    let mut g_q = vec![0.0; l * d];
    let mut g_k = vec![0.0; l * d];
    let mut g_v = vec![0.0; l * d];
    let mut g_srow = vec![0.0; l];
    for h in 0..nh {
        let off = h * dh;
        for i in 0..l {
            if !mask[i] {
                continue;
            }
            let p_row = &cache.probs[(h * l + i) * l..(h * l + i + 1) * l];
            let g_ctx_row = &g_ctx[i * d + off..i * d + off + dh];
            // dL/dp_j = g_ctx · v_j ; dL/dv_j += p_j * g_ctx.
            let mut dot_pg = 0.0;
            for j in 0..=i {
                let p = p_row[j];
                if p == 0.0 {
                    g_srow[j] = 0.0;
                    continue;
                }
                let gv = &mut g_v[j * d + off..j * d + off + dh];
                crate::tensor::axpy(p, g_ctx_row, gv);
                let gp = dot(g_ctx_row, &cache.v[j * d + off..j * d + off + dh]);
                g_srow[j] = gp;
                dot_pg += p * gp;
            }
            // Softmax backward: ds_j = p_j (gp_j - sum_k p_k gp_k).
            let qi = &cache.q[i * d + off..i * d + off + dh];
            let mut g_qi = vec![0.0; dh];
            for j in 0..=i {
                let p = p_row[j];
                if p == 0.0 {
                    continue;
                }
                let ds = p * (g_srow[j] - dot_pg) * scale;
                crate::tensor::axpy(ds, &cache.k[j * d + off..j * d + off + dh], &mut g_qi);
                let gk = &mut g_k[j * d + off..j * d + off + dh];
                crate::tensor::axpy(ds, qi, gk);
            }
            crate::tensor::axpy(1.0, &g_qi, &mut g_q[i * d + off..i * d + off + dh]);
        }
    }

    let mut g_normed = vec![0.0; l * d];
    linear_backward(&g_q, &cache.normed, l, d, refs.wq, d, Some(&mut g_normed), Some(&mut g.wq), None);
    linear_backward(&g_k, &cache.normed, l, d, refs.wk, d, Some(&mut g_normed), Some(&mut g.wk), None);
    linear_backward(&g_v, &cache.normed, l, d, refs.wv, d, Some(&mut g_normed), Some(&mut g.wv), None);

    for t in 0..l {
        if !mask[t] {
            g_normed[t * d..(t + 1) * d].iter_mut().for_each(|v| *v = 0.0);
        }
    }
    ln_backward(&cache.ln, refs.ln_g, &g_normed, gx, &mut g.ln_g, &mut g.ln_b);
    Ok(g)
}
