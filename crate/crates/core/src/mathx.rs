//! Scalar math kernels used throughout the crate.
//!
//! `exp` is the single hottest operation (discretization evaluates it once
//! per token, channel, and state entry), so we use a branch-light
//! polynomial implementation that the compiler can vectorize across slices
//! instead of `libm::exp`. Arguments outside the fast path fall back to
//! `libm` so subnormal/overflow behavior stays exact.

/// Upper bound of the fast path; above this `libm` handles overflow to inf.
const EXP_HI: f64 = 709.0;
/// Lower bound of the fast path; below this results are subnormal or zero
/// and `libm` handles them exactly.
const EXP_LO: f64 = -708.0;

const LOG2_E: f64 = core::f64::consts::LOG2_E;
// ln(2) split high/low so `x - k*ln2` stays accurate for large k.
const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;

/// exp(r) for |r| <= ln(2)/2 as a degree-13 Taylor polynomial (Horner).
/// Truncation error ~4e-18 relative, below the f64 rounding level.
#[inline(always)]
fn exp_poly(r: f64) -> f64 {
    const C: [f64; 13] = [
        1.0 / 6_227_020_800.0, // 1/13!
        1.0 / 479_001_600.0,   // 1/12!
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        1.0 / 2.0,
        1.0,
    ];
    let mut p = C[0];
    for &c in &C[1..] {
        p = p * r + c;
    }
    // p now holds sum_{n>=1} r^{n-1}/n!; multiply by r and add the 1 term.
    p * r + 1.0
}

/// Fast `exp` for finite arguments; exact fallbacks at the extremes.
#[inline]
pub fn exp(x: f64) -> f64 {
    if !(EXP_LO..=EXP_HI).contains(&x) {
        // NaN also lands here.
        return libm::exp(x);
    }
    // Round x/ln2 to the nearest integer with the 1.5*2^52 shifter trick
    // (branchless, ties to even, valid for |x/ln2| < 2^51).
    const SHIFTER: f64 = 6_755_399_441_055_744.0;
    let kf = (x * LOG2_E + SHIFTER) - SHIFTER;
    let k = kf as i64;
    let r = (x - kf * LN2_HI) - kf * LN2_LO;
    let p = exp_poly(r);
    // Scale by 2^k through the exponent bits; |k| <= 1023 inside the fast path.
    let scale = f64::from_bits(((1023 + k) as u64) << 52);
    p * scale
}

/// |x| without `std`.
#[inline]
pub fn abs(x: f64) -> f64 {
    f64::from_bits(x.to_bits() & 0x7FFF_FFFF_FFFF_FFFF)
}

/// In-place `exp` over a slice; the loop body is branch-predictable so the
/// common all-in-range case vectorizes.
pub fn exp_inplace(xs: &mut [f64]) {
    for x in xs.iter_mut() {
        *x = exp(*x);
    }
}

/// Logistic sigmoid 1/(1+e^-x).
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// SiLU (swish) activation x*sigmoid(x).
#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// d/dx silu(x) given sigmoid(x).
#[inline]
pub fn silu_grad(x: f64, sig: f64) -> f64 {
    sig * (1.0 + x * (1.0 - sig))
}

/// Numerically stable softplus ln(1+e^x); its derivative is `sigmoid`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(exp(-x))
    } else {
        libm::log1p(exp(x))
    }
}

/// Inverse of softplus: returns y with softplus(y) = x, for x > 0.
#[inline]
pub fn softplus_inv(x: f64) -> f64 {
    // ln(e^x - 1) = x + ln(1 - e^-x)
    x + libm::log(-libm::expm1(-x))
}

/// Natural logarithm (thin wrapper so core code never touches `std`).
#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}
