//! The gated selective-scan token mixer and its reverse-mode backward.
//!
//! Forward data path (per token sequence x of shape l_tok x d_model):
//!
//! ```text
//! normed  = LN(x) ⊙ mask
//! (stream, gate) = split(InProj(normed))            # no bias
//! xh      = SiLU(CausalConv(stream)) ⊙ mask         # depthwise width d_conv
//! B = xh Wb^T,  C = xh Wc^T                         # (l x N), no bias
//! delta   = softplus(xh Wlo^T Wup^T + dt_bias)      # low-rank, > 0
//! y_scan  = selective_scan(discretize(A, B, C, delta), xh, D_skip)
//! out     = OutProj(y_scan ⊙ SiLU(gate))            # no bias
//! ```
//!
//! `A = -exp(a_log)` keeps every diagonal entry strictly negative no
//! matter what training does to `a_log`. Masked rows are exactly inert:
//! the bias-free projections keep them zero, the conv output is re-masked,
//! and a masked prefix leaves the scan state at zero, which is what makes
//! left-padded windowed inference agree with recurrent inference bit for
//! bit.
//!
//! The backward pass consumes the caches recorded here, including the
//! per-token discretized parameters and every intermediate scan state.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::mathx;
use crate::params::ParamSet;
use crate::ssm::{self, DiscretizedStep};
use crate::tensor::{linear_backward, linear_forward};

use super::norm::{ln_backward, ln_forward, LnCache};
use super::stack::Precision;
use super::ModelConfig;

/// Borrowed views of one layer's mixer parameters.
pub struct MixerRefs<'a> {
    pub d: usize,
    pub di: usize,
    pub n: usize,
    pub r: usize,
    pub dc: usize,
    pub conv_enabled: bool,
    pub ln_g: &'a [f64],
    pub ln_b: &'a [f64],
    pub in_proj: &'a [f64],
    pub conv_w: &'a [f64],
    pub conv_b: &'a [f64],
    pub b_proj: &'a [f64],
    pub c_proj: &'a [f64],
    pub dt_lo: &'a [f64],
    pub dt_up: &'a [f64],
    pub dt_bias: &'a [f64],
    pub a_log: &'a [f64],
    pub d_skip: &'a [f64],
    pub out_proj: &'a [f64],
}

impl<'a> MixerRefs<'a> {
    pub fn resolve(cfg: &ModelConfig, params: &'a ParamSet, layer: usize) -> Result<Self> {
        let g = |leaf: &str| params.get(&alloc::format!("layers.{layer}.{leaf}"));
        static EMPTY: [f64; 0] = [];
        let (conv_w, conv_b) = if cfg.mixer_conv {
            (g("mixer.conv.w")?.data(), g("mixer.conv.b")?.data())
        } else {
            (&EMPTY[..], &EMPTY[..])
        };
        Ok(MixerRefs {
            d: cfg.d_model,
            di: cfg.d_inner(),
            n: cfg.d_state,
            r: cfg.dt_rank,
            dc: cfg.d_conv,
            conv_enabled: cfg.mixer_conv,
            ln_g: g("ln1.g")?.data(),
            ln_b: g("ln1.b")?.data(),
            in_proj: g("mixer.in_proj.w")?.data(),
            conv_w,
            conv_b,
            b_proj: g("mixer.b_proj.w")?.data(),
            c_proj: g("mixer.c_proj.w")?.data(),
            dt_lo: g("mixer.dt.lo.w")?.data(),
            dt_up: g("mixer.dt.up.w")?.data(),
            dt_bias: g("mixer.dt.bias")?.data(),
            a_log: g("mixer.a_log")?.data(),
            d_skip: g("mixer.d_skip")?.data(),
            out_proj: g("mixer.out_proj.w")?.data(),
        })
    }

    /// A = -exp(a_log).
    pub fn decode_a(&self) -> Vec<f64> {
        let mut a = self.a_log.to_vec();
        mathx::exp_inplace(&mut a);
        a.iter_mut().for_each(|v| *v = -*v);
        a
    }
}

/// Everything the backward pass needs from one mixer forward.
pub struct MixerCache {
    pub l: usize,
    pub ln: LnCache,
    /// LN output after masking (input of in_proj), l x d.
    pub normed: Vec<f64>,
    /// InProj output rows `[stream | gate]`, l x 2*di.
    pub proj: Vec<f64>,
    /// Pre-activation conv output, l x di.
    pub cv: Vec<f64>,
    /// sigmoid(cv).
    pub sig_cv: Vec<f64>,
    /// SiLU(cv) masked — the scan input, l x di.
    pub xh: Vec<f64>,
    /// l x n.
    pub b_mat: Vec<f64>,
    /// l x r.
    pub dt_low: Vec<f64>,
    /// Pre-softplus dt projection output, l x di.
    pub dt_raw: Vec<f64>,
    /// sigmoid of the pre-softplus dt, l x di.
    pub sig_dt: Vec<f64>,
    /// Discretized per-token parameters (A_bar, B_bar, C, delta).
    pub step: DiscretizedStep<f64>,
    /// A = -exp(a_log), di x n.
    pub a: Vec<f64>,
    /// Every intermediate scan state, l x di x n.
    pub h_all: Vec<f64>,
    /// Scan output, l x di.
    pub y_scan: Vec<f64>,
    /// sigmoid(gate).
    pub sig_gate: Vec<f64>,
    /// y_scan ⊙ SiLU(gate) — the OutProj input, l x di.
    pub gated: Vec<f64>,
}

/// Depthwise causal conv: cv[t, d] = b[d] + sum_k w[d, k] * stream[t-dc+1+k, d].
/// `stream` rows live inside `proj` with stride 2*di.
fn conv_forward(
    proj: &[f64],
    l: usize,
    di: usize,
    wt: &[f64], // transposed weights, dc x di
    dc: usize,
    b: &[f64],
    cv: &mut [f64],
) {
    for t in 0..l {
        let out = &mut cv[t * di..(t + 1) * di];
        out.copy_from_slice(b);
        for k in 0..dc {
            let tp = t as isize - (dc as isize - 1) + k as isize;
            if tp < 0 {
                continue;
            }
            let s = &proj[(tp as usize) * 2 * di..(tp as usize) * 2 * di + di];
            let wk = &wt[k * di..(k + 1) * di];
            for d in 0..di {
                out[d] += wk[d] * s[d];
            }
        }
    }
}

/// Mixer forward. `mask` has one entry per token; `out` (l x d) receives
/// the block contribution (caller adds the residual).
pub fn mixer_forward(
    refs: &MixerRefs<'_>,
    x: &[f64],
    l: usize,
    mask: &[bool],
    precision: Precision,
    out: &mut [f64],
) -> Result<MixerCache> {
    let (d, di, n, r, dc) = (refs.d, refs.di, refs.n, refs.r, refs.dc);

    // LayerNorm + mask.
    let mut normed = vec![0.0; l * d];
    let ln = ln_forward(x, l, d, refs.ln_g, refs.ln_b, &mut normed);
    for t in 0..l {
        if !mask[t] {
            normed[t * d..(t + 1) * d].iter_mut().for_each(|v| *v = 0.0);
        }
    }

    // Input projection into [stream | gate].
    let mut proj = vec![0.0; l * 2 * di];
    linear_forward(&normed, l, d, refs.in_proj, 2 * di, None, &mut proj);

    // Causal depthwise conv over the stream half (optional).
    let mut cv = vec![0.0; l * di];
    if refs.conv_enabled {
        let mut wt = vec![0.0; dc * di];
        for dd in 0..di {
            for k in 0..dc {
                wt[k * di + dd] = refs.conv_w[dd * dc + k];
            }
        }
        conv_forward(&proj, l, di, &wt, dc, refs.conv_b, &mut cv);
    } else {
        for t in 0..l {
            cv[t * di..(t + 1) * di].copy_from_slice(&proj[t * 2 * di..t * 2 * di + di]);
        }
    }

    // xh = SiLU(cv), re-masked because the conv carries a bias.
    let mut sig_cv = vec![0.0; l * di];
    let mut xh = vec![0.0; l * di];
    for t in 0..l {
        for dd in 0..di {
            let i = t * di + dd;
            let s = mathx::sigmoid(cv[i]);
            sig_cv[i] = s;
            xh[i] = if mask[t] { cv[i] * s } else { 0.0 };
        }
    }

    // Selection projections.
    let mut b_mat = vec![0.0; l * n];
    let mut c_mat = vec![0.0; l * n];
    linear_forward(&xh, l, di, refs.b_proj, n, None, &mut b_mat);
    linear_forward(&xh, l, di, refs.c_proj, n, None, &mut c_mat);
    let mut dt_low = vec![0.0; l * r];
    linear_forward(&xh, l, di, refs.dt_lo, r, None, &mut dt_low);
    let mut dt_raw = vec![0.0; l * di];
    linear_forward(&dt_low, l, r, refs.dt_up, di, Some(refs.dt_bias), &mut dt_raw);
    let mut sig_dt = vec![0.0; l * di];
    let mut delta = vec![0.0; l * di];
    for i in 0..l * di {
        sig_dt[i] = mathx::sigmoid(dt_raw[i]);
        delta[i] = mathx::softplus(dt_raw[i]);
    }

    // Discretize + scan, recording all intermediate states.
    let a = refs.decode_a();
    let ssm_cont = ssm::ContinuousSsm::new(di, n, a.clone(), refs.d_skip.to_vec())?;
    let mut h_all = Vec::new();
    let (step, y_scan) = match precision {
        Precision::F64 => {
            let step = ssm::discretize(&ssm_cont, &b_mat, &c_mat, &delta, l)?;
            let y = ssm::scan_sequential_recording(&step, &xh, refs.d_skip, &mut h_all)?;
            (step, y)
        }
        Precision::F32 => {
            // Single-precision scan kernel behind the flag: cast in, scan
            // in f32, cast back. Analysis tolerances are looser here.
            let c32 = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
            let ssm32 = ssm::ContinuousSsm::new(di, n, c32(&a), c32(refs.d_skip))?;
            let step32 = ssm::discretize(&ssm32, &c32(&b_mat), &c32(&c_mat), &c32(&delta), l)?;
            let mut h32 = Vec::new();
            let y32 = ssm::scan_sequential_recording(&step32, &c32(&xh), &c32(refs.d_skip), &mut h32)?;
            h_all = h32.iter().map(|&x| x as f64).collect();
            // Keep an f64 step for the caches/analysis.
            let step = ssm::discretize(&ssm_cont, &b_mat, &c_mat, &delta, l)?;
            (step, y32.iter().map(|&x| x as f64).collect())
        }
    };

    // Gate and output projection.
    let mut sig_gate = vec![0.0; l * di];
    let mut gated = vec![0.0; l * di];
    for t in 0..l {
        let g = &proj[t * 2 * di + di..(t + 1) * 2 * di];
        for dd in 0..di {
            let i = t * di + dd;
            let s = mathx::sigmoid(g[dd]);
            sig_gate[i] = s;
            // Same association as the recurrent path: y * silu(gate).
            gated[i] = y_scan[i] * (g[dd] * s);
        }
    }
    linear_forward(&gated, l, di, refs.out_proj, d, None, out);

    Ok(MixerCache {
        l,
        ln,
        normed,
        proj,
        cv,
        sig_cv,
        xh,
        b_mat,
        dt_low,
        dt_raw,
        sig_dt,
        step,
        a,
        h_all,
        y_scan,
        sig_gate,
        gated,
    })
}

/// Gradient sink for one mixer layer; committed into the grad ParamSet by
/// the caller so this module never aliases two map entries.
pub struct MixerGrads {
    pub ln_g: Vec<f64>,
    pub ln_b: Vec<f64>,
    pub in_proj: Vec<f64>,
    pub conv_w: Vec<f64>,
    pub conv_b: Vec<f64>,
    pub b_proj: Vec<f64>,
    pub c_proj: Vec<f64>,
    pub dt_lo: Vec<f64>,
    pub dt_up: Vec<f64>,
    pub dt_bias: Vec<f64>,
    pub a_log: Vec<f64>,
    pub d_skip: Vec<f64>,
    pub out_proj: Vec<f64>,
}

impl MixerGrads {
    fn zeros(refs: &MixerRefs<'_>) -> Self {
        MixerGrads {
            ln_g: vec![0.0; refs.ln_g.len()],
            ln_b: vec![0.0; refs.ln_b.len()],
            in_proj: vec![0.0; refs.in_proj.len()],
            conv_w: vec![0.0; refs.conv_w.len()],
            conv_b: vec![0.0; refs.conv_b.len()],
            b_proj: vec![0.0; refs.b_proj.len()],
            c_proj: vec![0.0; refs.c_proj.len()],
            dt_lo: vec![0.0; refs.dt_lo.len()],
            dt_up: vec![0.0; refs.dt_up.len()],
            dt_bias: vec![0.0; refs.dt_bias.len()],
            a_log: vec![0.0; refs.a_log.len()],
            d_skip: vec![0.0; refs.d_skip.len()],
            out_proj: vec![0.0; refs.out_proj.len()],
        }
    }

    /// Accumulate into the named gradient tensors.
    pub fn commit(self, layer: usize, conv_enabled: bool, grads: &mut ParamSet) -> Result<()> {
        let mut add = |leaf: &str, v: &[f64]| -> Result<()> {
            let g = grads.values_mut(&alloc::format!("layers.{layer}.{leaf}"))?;
            crate::tensor::axpy(1.0, v, g);
            Ok(())
        };
        add("ln1.g", &self.ln_g)?;
        add("ln1.b", &self.ln_b)?;
        add("mixer.in_proj.w", &self.in_proj)?;
        if conv_enabled {
            add("mixer.conv.w", &self.conv_w)?;
            add("mixer.conv.b", &self.conv_b)?;
        }
        add("mixer.b_proj.w", &self.b_proj)?;
        add("mixer.c_proj.w", &self.c_proj)?;
        add("mixer.dt.lo.w", &self.dt_lo)?;
        add("mixer.dt.up.w", &self.dt_up)?;
        add("mixer.dt.bias", &self.dt_bias)?;
        add("mixer.a_log", &self.a_log)?;
        add("mixer.d_skip", &self.d_skip)?;
        add("mixer.out_proj.w", &self.out_proj)?;
        Ok(())
    }
}

/// Backpropagation through the scan recurrence (BPTT). Consumes the
/// gradient of the scan outputs and distributes it to the scan input,
/// the selection matrices, delta, A, and the skip gain.
#[allow(clippy::too_many_arguments)]
fn scan_backward(
    cache: &MixerCache,
    refs: &MixerRefs<'_>,
    g_y_scan: &[f64],
    g_xh: &mut [f64],
    g_b_mat: &mut [f64],
    g_c_mat: &mut [f64],
    g_delta: &mut [f64],
    g_a: &mut [f64],
    g_d_skip: &mut [f64],
) {
    let (l, di, n) = (cache.l, refs.di, refs.n);
    let step = &cache.step;
    let mut g_h = vec![0.0; di * n];
    for t in (0..l).rev() {
        let c_t = &step.c()[t * n..(t + 1) * n];
        let b_t = &cache.b_mat[t * n..(t + 1) * n];
        for dd in 0..di {
            let i = t * di + dd;
            let gy = g_y_scan[i];
            let xv = cache.xh[i];
            g_d_skip[dd] += gy * xv;
            let mut gx_acc = gy * refs.d_skip[dd];
            let h_t = &cache.h_all[(t * di + dd) * n..(t * di + dd + 1) * n];
            let gh_row = &mut g_h[dd * n..(dd + 1) * n];
            // Direct output path y = C·h (+ skip) joins the carried grad.
            for nn in 0..n {
                g_c_mat[t * n + nn] += gy * h_t[nn];
                gh_row[nn] += gy * c_t[nn];
            }
            let ab = &step.a_bar()[(t * di + dd) * n..(t * di + dd + 1) * n];
            let bb = &step.b_bar()[(t * di + dd) * n..(t * di + dd + 1) * n];
            let dt = step.delta()[i];
            let a_row = &cache.a[dd * n..(dd + 1) * n];
            let mut g_dt_acc = 0.0;
            if t > 0 {
                let h_prev = &cache.h_all[((t - 1) * di + dd) * n..((t - 1) * di + dd + 1) * n];
                for nn in 0..n {
                    let gh = gh_row[nn];
                    let gab = gh * h_prev[nn];
                    g_dt_acc += gab * a_row[nn] * ab[nn];
                    g_a[dd * n + nn] += gab * dt * ab[nn];
                    gx_acc += gh * bb[nn];
                    g_dt_acc += gh * b_t[nn] * xv;
                    g_b_mat[t * n + nn] += gh * dt * xv;
                    gh_row[nn] = gh * ab[nn];
                }
            } else {
                // h_prev = 0: the A_bar path vanishes.
                for nn in 0..n {
                    let gh = gh_row[nn];
                    gx_acc += gh * bb[nn];
                    g_dt_acc += gh * b_t[nn] * xv;
                    g_b_mat[t * n + nn] += gh * dt * xv;
                    gh_row[nn] = gh * ab[nn];
                }
            }
            g_delta[i] += g_dt_acc;
            g_xh[i] += gx_acc;
        }
    }
}

/// Full mixer backward. `g_out` is the gradient at the mixer output
/// (l x d); input gradients accumulate into `gx`.
pub fn mixer_backward(
    refs: &MixerRefs<'_>,
    cache: &MixerCache,
    mask: &[bool],
    g_out: &[f64],
    gx: &mut [f64],
) -> Result<MixerGrads> {
    let (d, di, n, r, dc) = (refs.d, refs.di, refs.n, refs.r, refs.dc);
    let l = cache.l;
    let mut g = MixerGrads::zeros(refs);

    // OutProj.
    let mut g_gated = vec![0.0; l * di];
    linear_backward(g_out, &cache.gated, l, di, refs.out_proj, d, Some(&mut g_gated), Some(&mut g.out_proj), None);

    // Gate: gated = y_scan * silu(gate).
    let mut g_y_scan = vec![0.0; l * di];
    let mut g_gate = vec![0.0; l * di];
    for t in 0..l {
        let gate = &cache.proj[t * 2 * di + di..(t + 1) * 2 * di];
        for dd in 0..di {
            let i = t * di + dd;
            let sg = cache.sig_gate[i];
            let silu_g = gate[dd] * sg;
            g_y_scan[i] = g_gated[i] * silu_g;
            g_gate[i] = g_gated[i] * cache.y_scan[i] * mathx::silu_grad(gate[dd], sg);
        }
    }

    // Scan.
    let mut g_xh = vec![0.0; l * di];
    let mut g_b_mat = vec![0.0; l * n];
    let mut g_c_mat = vec![0.0; l * n];
    let mut g_delta = vec![0.0; l * di];
    let mut g_a = vec![0.0; di * n];
    scan_backward(cache, refs, &g_y_scan, &mut g_xh, &mut g_b_mat, &mut g_c_mat, &mut g_delta, &mut g_a, &mut g.d_skip);

    // a_log: A = -exp(a_log) so dA/da_log = A.
    for i in 0..di * n {
        g.a_log[i] = g_a[i] * cache.a[i];
    }

    // delta = softplus(dt_raw).
    let mut g_dt_raw = vec![0.0; l * di];
    for i in 0..l * di {
        g_dt_raw[i] = g_delta[i] * cache.sig_dt[i];
    }
    // dt_raw = dt_low Wup^T + bias.
    let mut g_dt_low = vec![0.0; l * r];
    linear_backward(&g_dt_raw, &cache.dt_low, l, r, refs.dt_up, di, Some(&mut g_dt_low), Some(&mut g.dt_up), Some(&mut g.dt_bias));
    linear_backward(&g_dt_low, &cache.xh, l, di, refs.dt_lo, r, Some(&mut g_xh), Some(&mut g.dt_lo), None);

    // Selection projections.
    linear_backward(&g_b_mat, &cache.xh, l, di, refs.b_proj, n, Some(&mut g_xh), Some(&mut g.b_proj), None);
    linear_backward(&g_c_mat, &cache.xh, l, di, refs.c_proj, n, Some(&mut g_xh), Some(&mut g.c_proj), None);

    // xh = SiLU(cv) ⊙ mask.
    let mut g_cv = vec![0.0; l * di];
    for t in 0..l {
        if !mask[t] {
            continue;
        }
        for dd in 0..di {
            let i = t * di + dd;
            g_cv[i] = g_xh[i] * mathx::silu_grad(cache.cv[i], cache.sig_cv[i]);
        }
    }

    // Conv (or pass-through).
    let mut g_proj = vec![0.0; l * 2 * di];
    if refs.conv_enabled {
        for t in 0..l {
            let gout_t = &g_cv[t * di..(t + 1) * di];
            for k in 0..dc {
                let tp = t as isize - (dc as isize - 1) + k as isize;
                if tp < 0 {
                    continue;
                }
                let tp = tp as usize;
                let s = &cache.proj[tp * 2 * di..tp * 2 * di + di];
                let gs = &mut g_proj[tp * 2 * di..tp * 2 * di + di];
                for dd in 0..di {
                    gs[dd] += gout_t[dd] * refs.conv_w[dd * dc + k];
                    g.conv_w[dd * dc + k] += gout_t[dd] * s[dd];
                }
            }
            for dd in 0..di {
                g.conv_b[dd] += gout_t[dd];
            }
        }
    } else {
        for t in 0..l {
            g_proj[t * 2 * di..t * 2 * di + di].copy_from_slice(&g_cv[t * di..(t + 1) * di]);
        }
    }
    // Gate half of the projection gradient.
    for t in 0..l {
        g_proj[t * 2 * di + di..(t + 1) * 2 * di].copy_from_slice(&g_gate[t * di..(t + 1) * di]);
    }

    // InProj.
    let mut g_normed = vec![0.0; l * d];
    linear_backward(&g_proj, &cache.normed, l, d, refs.in_proj, 2 * di, Some(&mut g_normed), Some(&mut g.in_proj), None);

    // Mask then LayerNorm.
    for t in 0..l {
        if !mask[t] {
            g_normed[t * d..(t + 1) * d].iter_mut().for_each(|v| *v = 0.0);
        }
    }
    ln_backward(&cache.ln, refs.ln_g, &g_normed, gx, &mut g.ln_g, &mut g.ln_b);
    Ok(g)
}
