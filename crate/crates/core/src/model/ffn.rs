//! Two-layer ReLU MLP sub-block (post-up-projection and attention blocks).

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{linear_backward, linear_forward};

pub struct FfnCache {
    /// Pre-activation hidden, l x 4d.
    pub h_pre: Vec<f64>,
    /// Post-ReLU hidden.
    pub h: Vec<f64>,
    /// Input rows, l x d.
    pub x: Vec<f64>,
}

/// y = W2 relu(W1 x + b1) + b2, masked rows forced to zero.
pub fn ffn_forward(
    x: &[f64],
    l: usize,
    d: usize,
    w1: &[f64],
    b1: &[f64],
    w2: &[f64],
    b2: &[f64],
    mask: &[bool],
    y: &mut [f64],
) -> FfnCache {
    let dh = 4 * d;
    let mut h_pre = vec![0.0; l * dh];
    linear_forward(x, l, d, w1, dh, Some(b1), &mut h_pre);
    let mut h = vec![0.0; l * dh];
    for i in 0..l * dh {
        h[i] = h_pre[i].max(0.0);
    }
    linear_forward(&h, l, dh, w2, d, Some(b2), y);
    for t in 0..l {
        if !mask[t] {
            y[t * d..(t + 1) * d].iter_mut().for_each(|v| *v = 0.0);
        }
    }
    FfnCache { h_pre, h, x: x.to_vec() }
}

pub struct FfnGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

pub fn ffn_backward(
    cache: &FfnCache,
    l: usize,
    d: usize,
    w1: &[f64],
    w2: &[f64],
    mask: &[bool],
    gy: &[f64],
    gx: &mut [f64],
) -> FfnGrads {
    let dh = 4 * d;
    let mut gy_masked = gy.to_vec();
    for t in 0..l {
        if !mask[t] {
            gy_masked[t * d..(t + 1) * d].iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let mut g = FfnGrads { w1: vec![0.0; w1.len()], b1: vec![0.0; dh], w2: vec![0.0; w2.len()], b2: vec![0.0; d] };
    let mut gh = vec![0.0; l * dh];
    linear_backward(&gy_masked, &cache.h, l, dh, w2, d, Some(&mut gh), Some(&mut g.w2), Some(&mut g.b2));
    for i in 0..l * dh {
        if cache.h_pre[i] <= 0.0 {
            gh[i] = 0.0;
        }
    }
    linear_backward(&gh, &cache.x, l, d, w1, dh, Some(gx), Some(&mut g.w1), Some(&mut g.b1));
    g
}
