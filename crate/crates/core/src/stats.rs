//! Small statistics helpers shared by the analysis decay fits and the
//! benchmark scaling-exponent fits.

use crate::error::{Error, Result};

/// Ordinary least squares line fit. Returns (slope, intercept, r_squared).
///
/// R^2 is defined as 1 - SS_res/SS_tot; for perfectly constant y it is 1
/// (the fit is exact) to keep the degenerate case well-defined.
pub fn linear_least_squares(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    if xs.len() != ys.len() {
        return Err(Error::shape("least squares: x/y length mismatch"));
    }
    let n = xs.len();
    if n < 2 {
        return Err(Error::insufficient("least squares needs >= 2 points"));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::insufficient("least squares: all x identical"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let e = y - (slope * x + intercept);
        ss_res += e * e;
        ss_tot += (y - my) * (y - my);
    }
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok((slope, intercept, r2))
}

/// Mean and (population) standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, crate::mathx::sqrt(var))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_is_recovered() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: alloc::vec::Vec<f64> = xs.iter().map(|x| -0.5 * x + 2.0).collect();
        let (s, i, r2) = linear_least_squares(&xs, &ys).unwrap();
        assert!((s + 0.5).abs() < 1e-12);
        assert!((i - 2.0).abs() < 1e-12);
        assert!((r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_y_has_zero_slope() {
        let xs = [1.0, 2.0, 3.0];
        let ys = [4.0, 4.0, 4.0];
        let (s, _, r2) = linear_least_squares(&xs, &ys).unwrap();
        assert_eq!(s, 0.0);
        assert_eq!(r2, 1.0);
    }
}
