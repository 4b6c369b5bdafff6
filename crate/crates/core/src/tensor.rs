//! A minimal dense row-major tensor plus the handful of BLAS-1/2 kernels
//! the model needs. Weights follow the (out_features x in_features)
//! convention so both the forward dot products and the backward rank-1
//! updates run over contiguous rows.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Dense f64 tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(alloc::format!(
                "tensor shape {shape:?} wants {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// Row `r` of a 2-D tensor.
    pub fn row(&self, r: usize) -> &[f64] {
        let cols = self.shape[self.shape.len() - 1];
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let cols = self.shape[self.shape.len() - 1];
        &mut self.data[r * cols..(r + 1) * cols]
    }

    /// True if any entry is NaN or infinite.
    pub fn has_non_finite(&self) -> bool {
        self.data.iter().any(|v| !v.is_finite())
    }

    pub fn shape_string(&self) -> String {
        alloc::format!("{:?}", self.shape)
    }
}

/// dot(a, b) over equal-length slices.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// y += alpha * x.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// out[r] = x[r] @ w^T + b for each row: x is (rows x d_in), w is
/// (d_out x d_in), out is (rows x d_out).
pub fn linear_forward(x: &[f64], rows: usize, d_in: usize, w: &[f64], d_out: usize, b: Option<&[f64]>, out: &mut [f64]) {
    debug_assert_eq!(x.len(), rows * d_in);
    debug_assert_eq!(w.len(), d_out * d_in);
    debug_assert_eq!(out.len(), rows * d_out);
    for r in 0..rows {
        let xr = &x[r * d_in..(r + 1) * d_in];
        let or = &mut out[r * d_out..(r + 1) * d_out];
        match b {
            Some(bias) => or.copy_from_slice(bias),
            None => or.iter_mut().for_each(|v| *v = 0.0),
        }
        for o in 0..d_out {
            or[o] += dot(xr, &w[o * d_in..(o + 1) * d_in]);
        }
    }
}

/// Reverse of [`linear_forward`]: accumulates input, weight, and bias
/// gradients. Any of the gradient sinks may be omitted.
pub fn linear_backward(
    gy: &[f64],
    x: &[f64],
    rows: usize,
    d_in: usize,
    w: &[f64],
    d_out: usize,
    gx: Option<&mut [f64]>,
    gw: Option<&mut [f64]>,
    gb: Option<&mut [f64]>,
) {
    debug_assert_eq!(gy.len(), rows * d_out);
    if let Some(gx) = gx {
        debug_assert_eq!(gx.len(), rows * d_in);
        for r in 0..rows {
            let gyr = &gy[r * d_out..(r + 1) * d_out];
            let gxr = &mut gx[r * d_in..(r + 1) * d_in];
            for o in 0..d_out {
                axpy(gyr[o], &w[o * d_in..(o + 1) * d_in], gxr);
            }
        }
    }
    if let Some(gw) = gw {
        debug_assert_eq!(gw.len(), d_out * d_in);
        for r in 0..rows {
            let gyr = &gy[r * d_out..(r + 1) * d_out];
            let xr = &x[r * d_in..(r + 1) * d_in];
            for o in 0..d_out {
                axpy(gyr[o], xr, &mut gw[o * d_in..(o + 1) * d_in]);
            }
        }
    }
    if let Some(gb) = gb {
        debug_assert_eq!(gb.len(), d_out);
        for r in 0..rows {
            axpy(1.0, &gy[r * d_out..(r + 1) * d_out], gb);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_element_count() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn linear_roundtrip_small() {
        // y = W x with W = [[1,2],[3,4],[5,6]], x = (1, -1)
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let x = [1.0, -1.0];
        let mut y = [0.0; 3];
        linear_forward(&x, 1, 2, &w, 3, None, &mut y);
        assert_eq!(y, [-1.0, -1.0, -1.0]);

        let gy = [1.0, 0.0, 0.0];
        let mut gx = [0.0; 2];
        let mut gw = [0.0; 6];
        let mut gb = [0.0; 3];
        linear_backward(&gy, &x, 1, 2, &w, 3, Some(&mut gx), Some(&mut gw), Some(&mut gb));
        assert_eq!(gx, [1.0, 2.0]);
        assert_eq!(gw, [1.0, -1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(gb, [1.0, 0.0, 0.0]);
    }
}
