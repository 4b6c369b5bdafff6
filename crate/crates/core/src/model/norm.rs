//! Per-token LayerNorm with cached statistics for the backward pass.

use alloc::vec;
use alloc::vec::Vec;

use crate::mathx;

pub const LN_EPS: f64 = 1e-5;

pub struct LnCache {
    /// Normalized activations (x - mu) / sigma, before gain/bias.
    pub xhat: Vec<f64>,
    /// 1/sigma per row.
    pub rstd: Vec<f64>,
    pub rows: usize,
    pub d: usize,
}

/// y = g ⊙ (x - mean)/sqrt(var + eps) + b, row-wise.
pub fn ln_forward(x: &[f64], rows: usize, d: usize, g: &[f64], b: &[f64], y: &mut [f64]) -> LnCache {
    debug_assert_eq!(x.len(), rows * d);
    let mut xhat = vec![0.0; rows * d];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / mathx::sqrt(var + LN_EPS);
        rstd[r] = rs;
        let xh = &mut xhat[r * d..(r + 1) * d];
        let yr = &mut y[r * d..(r + 1) * d];
        for i in 0..d {
            let h = (xr[i] - mean) * rs;
            xh[i] = h;
            yr[i] = g[i] * h + b[i];
        }
    }
    LnCache { xhat, rstd, rows, d }
}

/// Accumulates dx into `gx` and parameter gradients into `gg`/`gb`.
pub fn ln_backward(cache: &LnCache, g: &[f64], gy: &[f64], gx: &mut [f64], gg: &mut [f64], gb: &mut [f64]) {
    let (rows, d) = (cache.rows, cache.d);
    let df = d as f64;
    for r in 0..rows {
        let gyr = &gy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let rs = cache.rstd[r];
        let mut sum_gh = 0.0;
        let mut sum_gh_xh = 0.0;
        for i in 0..d {
            let gh = gyr[i] * g[i];
            sum_gh += gh;
            sum_gh_xh += gh * xh[i];
            gg[i] += gyr[i] * xh[i];
            gb[i] += gyr[i];
        }
        let gxr = &mut gx[r * d..(r + 1) * d];
        for i in 0..d {
            let gh = gyr[i] * g[i];
            gxr[i] += rs * (gh - sum_gh / df - xh[i] * sum_gh_xh / df);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = crate::rng::stream_rng(3, 0);
        let (rows, d) = (3usize, 5usize);
        let x: Vec<f64> = (0..rows * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let g: Vec<f64> = (0..d).map(|_| rng.gen_range(0.5..1.5)).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.5..0.5)).collect();
        // Scalar objective: weighted sum of outputs.
        let w: Vec<f64> = (0..rows * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |x: &[f64], g: &[f64], b: &[f64]| -> f64 {
            let mut y = vec![0.0; rows * d];
            ln_forward(x, rows, d, g, b, &mut y);
            y.iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let mut y = vec![0.0; rows * d];
        let cache = ln_forward(&x, rows, d, &g, &b, &mut y);
        let mut gx = vec![0.0; rows * d];
        let mut gg = vec![0.0; d];
        let mut gb = vec![0.0; d];
        ln_backward(&cache, &g, &w, &mut gx, &mut gg, &mut gb);
        let eps = 1e-6;
        for i in 0..rows * d {
            let mut xp = x.clone();
            xp[i] += eps;
            let mut xm = x.clone();
            xm[i] -= eps;
            let num = (loss(&xp, &g, &b) - loss(&xm, &g, &b)) / (2.0 * eps);
            assert!((num - gx[i]).abs() < 1e-7, "gx[{i}]: {num} vs {}", gx[i]);
        }
        for i in 0..d {
            let mut gp = g.clone();
            gp[i] += eps;
            let mut gm = g.clone();
            gm[i] -= eps;
            let num = (loss(&x, &gp, &b) - loss(&x, &gm, &b)) / (2.0 * eps);
            assert!((num - gg[i]).abs() < 1e-7);
        }
    }
}
