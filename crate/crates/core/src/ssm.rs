//! Discretization and the selective scan.
//!
//! A continuous diagonal state-space layer
//!
//! ```text
//! h'(t) = A h(t) + B u(t),    y(t) = C h(t) + D u(t)
//! ```
//!
//! is discretized per token by a step size delta: `A_bar = exp(delta * A)`
//! (zero-order hold) and `B_bar = delta * B` (Euler). The recurrence
//!
//! ```text
//! h_t = A_bar_t ⊙ h_{t-1} + B_bar_t x_t,    y_t = C_t · h_t + D ⊙ x_t
//! ```
//!
//! with `h_0 = 0` is evaluated four ways, all agreeing: token-by-token
//! ([`recurrent_step`]), sequentially over a sequence ([`scan_sequential`],
//! bitwise equal to folding [`recurrent_step`]), as a Blelloch associative
//! scan ([`scan_parallel`], equal up to float reassociation), and — in the
//! time-invariant case — as a causal convolution with the kernel
//! `K[j] = C A_bar^j B_bar` ([`lti_convolution`]).
//!
//! Everything is generic over [`ScanFloat`]; `f64` is the reference
//! precision, `f32` is available behind the same API with looser
//! tolerances.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::mathx;

/// Float types the scan kernels run on.
pub trait ScanFloat: Float + core::fmt::Debug + 'static {
    /// Elementwise exp, specialized so the f64 path uses the fast kernel.
    fn exp_inplace(xs: &mut [Self]);

    fn from_f64(x: f64) -> Self {
        <Self as num_traits::NumCast>::from(x).unwrap()
    }

    fn into_f64(self) -> f64 {
        self.to_f64().unwrap()
    }
}

impl ScanFloat for f64 {
    fn exp_inplace(xs: &mut [Self]) {
        mathx::exp_inplace(xs);
    }
}

impl ScanFloat for f32 {
    fn exp_inplace(xs: &mut [Self]) {
        for x in xs.iter_mut() {
            *x = libm::expf(*x);
        }
    }
}

/// Continuous-time layer parameters: per-channel diagonal `A` (strictly
/// negative) and the per-channel skip gain `D`.
#[derive(Debug, Clone)]
pub struct ContinuousSsm<T> {
    d_inner: usize,
    n: usize,
    /// (d_inner x n), every entry < 0.
    a: Vec<T>,
    /// (d_inner).
    d_skip: Vec<T>,
}

impl<T: ScanFloat> ContinuousSsm<T> {
    pub fn new(d_inner: usize, n: usize, a: Vec<T>, d_skip: Vec<T>) -> Result<Self> {
        if d_inner == 0 || n == 0 {
            return Err(Error::domain("state dimension and channel count must be >= 1"));
        }
        if a.len() != d_inner * n {
            return Err(Error::shape(alloc::format!(
                "A has {} entries, want d_inner*n = {}",
                a.len(),
                d_inner * n
            )));
        }
        if d_skip.len() != d_inner {
            return Err(Error::shape("D_skip length must equal d_inner"));
        }
        if a.iter().any(|v| !(*v < T::zero())) {
            return Err(Error::domain("every diagonal entry of A must be strictly negative"));
        }
        Ok(ContinuousSsm { d_inner, n, a, d_skip })
    }

    pub fn d_inner(&self) -> usize {
        self.d_inner
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn a(&self) -> &[T] {
        &self.a
    }

    pub fn d_skip(&self) -> &[T] {
        &self.d_skip
    }
}

/// Token-wise discretized parameters.
///
/// `a_bar` and `b_bar` are materialized per token because the selective
/// form makes them input-dependent: layout is `[t][d][n]` (row-major), `c`
/// is `[t][n]`, `delta` is `[t][d]`.
#[derive(Debug, Clone)]
pub struct DiscretizedStep<T> {
    l: usize,
    d_inner: usize,
    n: usize,
    a_bar: Vec<T>,
    b_bar: Vec<T>,
    c: Vec<T>,
    delta: Vec<T>,
}

/// Borrowed per-token view into a [`DiscretizedStep`].
#[derive(Debug, Clone, Copy)]
pub struct TokenParams<'a, T> {
    /// (d_inner x n).
    pub a_bar: &'a [T],
    /// (d_inner x n).
    pub b_bar: &'a [T],
    /// (n).
    pub c: &'a [T],
}

impl<T: ScanFloat> DiscretizedStep<T> {
    pub fn l(&self) -> usize {
        self.l
    }

    pub fn d_inner(&self) -> usize {
        self.d_inner
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn a_bar(&self) -> &[T] {
        &self.a_bar
    }

    pub fn b_bar(&self) -> &[T] {
        &self.b_bar
    }

    pub fn c(&self) -> &[T] {
        &self.c
    }

    pub fn delta(&self) -> &[T] {
        &self.delta
    }

    pub fn token(&self, t: usize) -> TokenParams<'_, T> {
        let dn = self.d_inner * self.n;
        TokenParams {
            a_bar: &self.a_bar[t * dn..(t + 1) * dn],
            b_bar: &self.b_bar[t * dn..(t + 1) * dn],
            c: &self.c[t * self.n..(t + 1) * self.n],
        }
    }
}

/// Zero-order-hold / Euler discretization.
///
/// - `b`: per-token input projection, `(l x n)`, shared across channels.
/// - `c`: per-token output projection, `(l x n)`, carried through unchanged.
/// - `delta`: per-token per-channel step sizes, `(l x d_inner)`, all > 0.
///
/// Produces `A_bar[t,d,n] = exp(delta[t,d] * A[d,n])` and
/// `B_bar[t,d,n] = delta[t,d] * B[t,n]`.
pub fn discretize<T: ScanFloat>(
    ssm: &ContinuousSsm<T>,
    b: &[T],
    c: &[T],
    delta: &[T],
    l: usize,
) -> Result<DiscretizedStep<T>> {
    let (d_inner, n) = (ssm.d_inner, ssm.n);
    if b.len() != l * n {
        return Err(Error::shape(alloc::format!("B has {} entries, want l*n = {}", b.len(), l * n)));
    }
    if c.len() != l * n {
        return Err(Error::shape(alloc::format!("C has {} entries, want l*n = {}", c.len(), l * n)));
    }
    if delta.len() != l * d_inner {
        return Err(Error::shape(alloc::format!(
            "delta has {} entries, want l*d_inner = {}",
            delta.len(),
            l * d_inner
        )));
    }
    if delta.iter().any(|v| !(*v > T::zero())) {
        return Err(Error::domain("delta must be strictly positive elementwise"));
    }
    let dn = d_inner * n;
    let mut a_bar = vec![T::zero(); l * dn];
    let mut b_bar = vec![T::zero(); l * dn];
    for t in 0..l {
        for d in 0..d_inner {
            let dt = delta[t * d_inner + d];
            let a_row = &ssm.a[d * n..(d + 1) * n];
            let ab = &mut a_bar[(t * d_inner + d) * n..(t * d_inner + d + 1) * n];
            for (o, &a) in ab.iter_mut().zip(a_row) {
                *o = dt * a;
            }
            T::exp_inplace(ab);
            let b_row = &b[t * n..(t + 1) * n];
            let bb = &mut b_bar[(t * d_inner + d) * n..(t * d_inner + d + 1) * n];
            for (o, &bv) in bb.iter_mut().zip(b_row) {
                *o = dt * bv;
            }
        }
    }
    Ok(DiscretizedStep { l, d_inner, n, a_bar, b_bar, c: c.to_vec(), delta: delta.to_vec() })
}

/// Scan state: per-channel hidden vectors `h` (`d_inner x n`), zero at t=0.
#[derive(Debug, Clone)]
pub struct ScanState<T> {
    d_inner: usize,
    n: usize,
    /// (d_inner x n).
    pub h: Vec<T>,
    /// Number of tokens consumed so far.
    pub t: usize,
}

impl<T: ScanFloat> ScanState<T> {
    pub fn zeros(d_inner: usize, n: usize) -> Self {
        ScanState { d_inner, n, h: vec![T::zero(); d_inner * n], t: 0 }
    }

    pub fn d_inner(&self) -> usize {
        self.d_inner
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

#[inline]
fn step_kernel<T: ScanFloat>(
    a_bar: &[T],
    b_bar: &[T],
    c: &[T],
    skip: &[T],
    x_t: &[T],
    h: &mut [T],
    y_t: &mut [T],
    d_inner: usize,
    n: usize,
) {
    for d in 0..d_inner {
        let hd = &mut h[d * n..(d + 1) * n];
        let ab = &a_bar[d * n..(d + 1) * n];
        let bb = &b_bar[d * n..(d + 1) * n];
        let xv = x_t[d];
        let mut acc = T::zero();
        for i in 0..n {
            let hn = ab[i] * hd[i] + bb[i] * xv;
            hd[i] = hn;
            acc = acc + c[i] * hn;
        }
        y_t[d] = acc + skip[d] * xv;
    }
}

/// One application of the recurrence: consumes one token, updates the
/// state in place and writes `y_t`. Folding this over a sequence is
/// bitwise identical to [`scan_sequential`].
pub fn recurrent_step<T: ScanFloat>(
    state: &mut ScanState<T>,
    token: TokenParams<'_, T>,
    x_t: &[T],
    skip: &[T],
    y_t: &mut [T],
) -> Result<()> {
    let (d_inner, n) = (state.d_inner, state.n);
    if token.a_bar.len() != d_inner * n
        || token.b_bar.len() != d_inner * n
        || token.c.len() != n
        || x_t.len() != d_inner
        || skip.len() != d_inner
        || y_t.len() != d_inner
    {
        return Err(Error::shape("recurrent_step: state/parameter dimensions disagree"));
    }
    step_kernel(token.a_bar, token.b_bar, token.c, skip, x_t, &mut state.h, y_t, d_inner, n);
    state.t += 1;
    Ok(())
}

fn check_scan_shapes<T: ScanFloat>(step: &DiscretizedStep<T>, x: &[T], skip: &[T]) -> Result<()> {
    if x.len() != step.l * step.d_inner {
        return Err(Error::shape(alloc::format!(
            "scan input has {} entries, want l*d_inner = {}",
            x.len(),
            step.l * step.d_inner
        )));
    }
    if skip.len() != step.d_inner {
        return Err(Error::shape("skip length must equal d_inner"));
    }
    Ok(())
}

/// Sequential scan over the whole sequence. Returns the outputs
/// (`l x d_inner`) and the final state.
pub fn scan_sequential<T: ScanFloat>(
    step: &DiscretizedStep<T>,
    x: &[T],
    skip: &[T],
) -> Result<(Vec<T>, ScanState<T>)> {
    check_scan_shapes(step, x, skip)?;
    let (l, d_inner, n) = (step.l, step.d_inner, step.n);
    let mut state = ScanState::zeros(d_inner, n);
    let mut y = vec![T::zero(); l * d_inner];
    for t in 0..l {
        let tok = step.token(t);
        step_kernel(
            tok.a_bar,
            tok.b_bar,
            tok.c,
            skip,
            &x[t * d_inner..(t + 1) * d_inner],
            &mut state.h,
            &mut y[t * d_inner..(t + 1) * d_inner],
            d_inner,
            n,
        );
        state.t += 1;
    }
    Ok((y, state))
}

/// Like [`scan_sequential`] but also records every intermediate state
/// `h_t` into `h_all` (`l x d_inner x n`), for backpropagation and for
/// exact hidden-attention reconstruction. Outputs are bitwise identical to
/// [`scan_sequential`].
pub fn scan_sequential_recording<T: ScanFloat>(
    step: &DiscretizedStep<T>,
    x: &[T],
    skip: &[T],
    h_all: &mut Vec<T>,
) -> Result<Vec<T>> {
    check_scan_shapes(step, x, skip)?;
    let (l, d_inner, n) = (step.l, step.d_inner, step.n);
    let dn = d_inner * n;
    h_all.clear();
    h_all.resize(l * dn, T::zero());
    let mut state = ScanState::zeros(d_inner, n);
    let mut y = vec![T::zero(); l * d_inner];
    for t in 0..l {
        let tok = step.token(t);
        step_kernel(
            tok.a_bar,
            tok.b_bar,
            tok.c,
            skip,
            &x[t * d_inner..(t + 1) * d_inner],
            &mut state.h,
            &mut y[t * d_inner..(t + 1) * d_inner],
            d_inner,
            n,
        );
        h_all[t * dn..(t + 1) * dn].copy_from_slice(&state.h);
        state.t += 1;
    }
    Ok(y)
}

/// Combine for the associative scan: element `(a, b)` is the affine map
/// `h -> a ⊙ h + b`; `combine(p, q)` composes "p first, then q".
#[inline]
fn combine_into<T: ScanFloat>(a_p: &[T], b_p: &[T], a_q: &mut [T], b_q: &mut [T]) {
    for i in 0..a_q.len() {
        b_q[i] = a_q[i] * b_p[i] + b_q[i];
        a_q[i] = a_q[i] * a_p[i];
    }
}

/// Blelloch-style balanced-tree scan over the pairs
/// `(A_bar_t, B_bar_t x_t)`. The combine order is fixed (left-to-right
/// leaves over a power-of-two padded tree), so results are reproducible;
/// they match [`scan_sequential`] up to floating-point reassociation.
pub fn scan_parallel<T: ScanFloat>(step: &DiscretizedStep<T>, x: &[T], skip: &[T]) -> Result<Vec<T>> {
    check_scan_shapes(step, x, skip)?;
    let (l, d_inner, n) = (step.l, step.d_inner, step.n);
    let dn = d_inner * n;
    let p = l.next_power_of_two();

    // Leaves: a = A_bar_t, b = B_bar_t * x_t; identity (1, 0) padding.
    let mut tree_a = vec![T::one(); p * dn];
    let mut tree_b = vec![T::zero(); p * dn];
    for t in 0..l {
        tree_a[t * dn..(t + 1) * dn].copy_from_slice(&step.a_bar[t * dn..(t + 1) * dn]);
        let bb = &step.b_bar[t * dn..(t + 1) * dn];
        let tb = &mut tree_b[t * dn..(t + 1) * dn];
        for d in 0..d_inner {
            let xv = x[t * d_inner + d];
            for i in 0..n {
                tb[d * n + i] = bb[d * n + i] * xv;
            }
        }
    }
    let leaf_a = tree_a.clone();
    let leaf_b = tree_b.clone();

    // Up-sweep: node[i] = combine(node[i - half], node[i]).
    let levels = p.trailing_zeros();
    for lev in 0..levels {
        let stride = 1usize << (lev + 1);
        let half = stride >> 1;
        let mut i = stride - 1;
        while i < p {
            let (lo, hi) = tree_split(&mut tree_a, &mut tree_b, (i - half) * dn, i * dn, dn);
            combine_into(lo.0, lo.1, hi.0, hi.1);
            i += stride;
        }
    }

    // Down-sweep for the exclusive scan: root gets the identity.
    tree_a[(p - 1) * dn..].iter_mut().for_each(|v| *v = T::one());
    tree_b[(p - 1) * dn..].iter_mut().for_each(|v| *v = T::zero());
    let mut tmp_a = vec![T::zero(); dn];
    let mut tmp_b = vec![T::zero(); dn];
    for lev in (0..levels).rev() {
        let stride = 1usize << (lev + 1);
        let half = stride >> 1;
        let mut i = stride - 1;
        while i < p {
            let j = i - half;
            tmp_a.copy_from_slice(&tree_a[j * dn..(j + 1) * dn]);
            tmp_b.copy_from_slice(&tree_b[j * dn..(j + 1) * dn]);
            // Left child inherits the parent's prefix; right child gets
            // prefix-then-left-subtree.
            let (parent_a, parent_b) = (
                tree_a[i * dn..(i + 1) * dn].to_vec(),
                tree_b[i * dn..(i + 1) * dn].to_vec(),
            );
            tree_a[j * dn..(j + 1) * dn].copy_from_slice(&parent_a);
            tree_b[j * dn..(j + 1) * dn].copy_from_slice(&parent_b);
            let hi_a = &mut tree_a[i * dn..(i + 1) * dn];
            let hi_b = &mut tree_b[i * dn..(i + 1) * dn];
            hi_a.copy_from_slice(&tmp_a);
            hi_b.copy_from_slice(&tmp_b);
            combine_into(&parent_a, &parent_b, hi_a, hi_b);
            i += stride;
        }
    }

    // Inclusive value at t: combine(exclusive_t, leaf_t); h_t is its b part
    // (h_0 = 0 makes the a part irrelevant).
    let mut y = vec![T::zero(); l * d_inner];
    for t in 0..l {
        let ex_a = &tree_a[t * dn..(t + 1) * dn];
        let ex_b = &tree_b[t * dn..(t + 1) * dn];
        let la = &leaf_a[t * dn..(t + 1) * dn];
        let lb = &leaf_b[t * dn..(t + 1) * dn];
        let c_t = &step.c[t * n..(t + 1) * n];
        for d in 0..d_inner {
            let mut acc = T::zero();
            for i in 0..n {
                let idx = d * n + i;
                let h = la[idx] * ex_b[idx] + lb[idx];
                let _ = ex_a; // a part of the composition is unused with h_0 = 0
                acc = acc + c_t[i] * h;
            }
            y[t * d_inner + d] = acc + skip[d] * x[t * d_inner + d];
        }
    }
    Ok(y)
}

// Split two parallel arrays into (lo, hi) disjoint element views.
#[allow(clippy::type_complexity)]
fn tree_split<'a, T>(
    a: &'a mut [T],
    b: &'a mut [T],
    lo_off: usize,
    hi_off: usize,
    dn: usize,
) -> ((&'a [T], &'a [T]), (&'a mut [T], &'a mut [T])) {
    debug_assert!(lo_off + dn <= hi_off);
    let (a_head, a_tail) = a.split_at_mut(hi_off);
    let (b_head, b_tail) = b.split_at_mut(hi_off);
    (
        (&a_head[lo_off..lo_off + dn], &b_head[lo_off..lo_off + dn]),
        (&mut a_tail[..dn], &mut b_tail[..dn]),
    )
}

/// Length-L causal filter taps, one filter per channel:
/// `k[j, d] = sum_n C[n] * A_bar[d,n]^j * B_bar[d,n]`.
#[derive(Debug, Clone)]
pub struct LtiKernel<T> {
    l: usize,
    d_inner: usize,
    /// `[j][d]` row-major.
    taps: Vec<T>,
}

impl<T: ScanFloat> LtiKernel<T> {
    /// Build from explicitly time-invariant parameters.
    pub fn new(a_bar: &[T], b_bar: &[T], c: &[T], d_inner: usize, n: usize, l: usize) -> Result<Self> {
        if a_bar.len() != d_inner * n || b_bar.len() != d_inner * n || c.len() != n {
            return Err(Error::shape("LTI kernel: parameter dimensions disagree"));
        }
        if l == 0 {
            return Err(Error::domain("LTI kernel length must be >= 1"));
        }
        let mut taps = vec![T::zero(); l * d_inner];
        // Running power p_j = A_bar^j B_bar, advanced in place.
        let mut p = b_bar.to_vec();
        for j in 0..l {
            for d in 0..d_inner {
                let mut acc = T::zero();
                for i in 0..n {
                    acc = acc + c[i] * p[d * n + i];
                }
                taps[j * d_inner + d] = acc;
            }
            if j + 1 < l {
                for d in 0..d_inner {
                    for i in 0..n {
                        p[d * n + i] = p[d * n + i] * a_bar[d * n + i];
                    }
                }
            }
        }
        Ok(LtiKernel { l, d_inner, taps })
    }

    /// Build from a [`DiscretizedStep`], verifying that every token carries
    /// identical parameters. Token-varying parameters are an invariant
    /// violation: the convolution view only exists for the LTI case.
    pub fn from_step(step: &DiscretizedStep<T>) -> Result<Self> {
        let dn = step.d_inner * step.n;
        for t in 1..step.l {
            let same = step.a_bar[t * dn..(t + 1) * dn] == step.a_bar[..dn]
                && step.b_bar[t * dn..(t + 1) * dn] == step.b_bar[..dn]
                && step.c[t * step.n..(t + 1) * step.n] == step.c[..step.n];
            if !same {
                return Err(Error::invariant(
                    "cannot build an LTI kernel from token-varying parameters",
                ));
            }
        }
        Self::new(&step.a_bar[..dn], &step.b_bar[..dn], &step.c[..step.n], step.d_inner, step.n, step.l)
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn d_inner(&self) -> usize {
        self.d_inner
    }

    pub fn taps(&self) -> &[T] {
        &self.taps
    }
}

/// Causal convolution `y = K * u` per channel; the kernel length must
/// equal the sequence length. Equals [`scan_sequential`] with constant
/// parameters and zero skip.
pub fn lti_convolution<T: ScanFloat>(kernel: &LtiKernel<T>, u: &[T]) -> Result<Vec<T>> {
    let (l, d_inner) = (kernel.l, kernel.d_inner);
    if u.len() != l * d_inner {
        return Err(Error::shape(alloc::format!(
            "convolution input has {} entries, want l*d_inner = {}",
            u.len(),
            l * d_inner
        )));
    }
    let mut y = vec![T::zero(); l * d_inner];
    for t in 0..l {
        for j in 0..=t {
            let k_row = &kernel.taps[j * d_inner..(j + 1) * d_inner];
            let u_row = &u[(t - j) * d_inner..(t - j + 1) * d_inner];
            let y_row = &mut y[t * d_inner..(t + 1) * d_inner];
            for d in 0..d_inner {
                y_row[d] = y_row[d] + k_row[d] * u_row[d];
            }
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn scalar_step(l: usize, a_bar: f64, b_bar: f64, c: f64) -> DiscretizedStep<f64> {
        DiscretizedStep {
            l,
            d_inner: 1,
            n: 1,
            a_bar: vec![a_bar; l],
            b_bar: vec![b_bar; l],
            c: vec![c; l],
            delta: vec![1.0; l],
        }
    }

    /// Literal double sum y_i = C_i sum_j (prod_{k=j+1..i} A_bar_k) B_bar_j x_j + D x_i.
    fn double_sum_oracle(step: &DiscretizedStep<f64>, x: &[f64], skip: &[f64]) -> Vec<f64> {
        let (l, d, n) = (step.l, step.d_inner, step.n);
        let dn = d * n;
        let mut y = vec![0.0; l * d];
        for i in 0..l {
            let c_i = &step.c[i * n..(i + 1) * n];
            for dd in 0..d {
                let mut acc = 0.0;
                for j in 0..=i {
                    for nn in 0..n {
                        let mut prod = 1.0;
                        for k in j + 1..=i {
                            prod *= step.a_bar[k * dn + dd * n + nn];
                        }
                        acc += c_i[nn] * prod * step.b_bar[j * dn + dd * n + nn] * x[j * d + dd];
                    }
                }
                y[i * d + dd] = acc + skip[dd] * x[i * d + dd];
            }
        }
        y
    }

    fn random_instance(rng: &mut impl Rng, l: usize, d: usize, n: usize) -> (DiscretizedStep<f64>, Vec<f64>, Vec<f64>) {
        let a: Vec<f64> = (0..d * n).map(|_| -rng.gen_range(0.05..4.0)).collect();
        let d_skip: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ssm = ContinuousSsm::new(d, n, a, d_skip.clone()).unwrap();
        let b: Vec<f64> = (0..l * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..l * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let delta: Vec<f64> = (0..l * d).map(|_| rng.gen_range(1e-3..1.0)).collect();
        let step = discretize(&ssm, &b, &c, &delta, l).unwrap();
        let x: Vec<f64> = (0..l * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (step, x, d_skip)
    }

    #[test]
    fn discretize_analytic_values() {
        // A = diag(-1), delta = ln 2 -> A_bar = 0.5.
        let ssm = ContinuousSsm::new(1, 1, vec![-1.0], vec![0.0]).unwrap();
        let step = discretize(&ssm, &[1.0], &[1.0], &[core::f64::consts::LN_2], 1).unwrap();
        assert!((step.a_bar[0] - 0.5).abs() < 1e-15);
        // Euler rule: B = 1, delta = 0.1 -> B_bar = 0.1.
        let step = discretize(&ssm, &[1.0], &[1.0], &[0.1], 1).unwrap();
        assert!((step.b_bar[0] - 0.1).abs() < 1e-16);
        // delta -> 0+ gives the identity A_bar -> 1.
        let step = discretize(&ssm, &[1.0], &[1.0], &[1e-14], 1).unwrap();
        assert!((step.a_bar[0] - 1.0).abs() < 1e-13);
    }

    #[test]
    fn discretize_rejects_bad_inputs() {
        let ssm = ContinuousSsm::new(1, 1, vec![-1.0], vec![0.0]).unwrap();
        assert!(matches!(discretize(&ssm, &[1.0], &[1.0], &[0.0], 1), Err(Error::Domain(_))));
        assert!(matches!(discretize(&ssm, &[1.0], &[1.0], &[-0.5], 1), Err(Error::Domain(_))));
        assert!(matches!(discretize(&ssm, &[1.0, 2.0], &[1.0], &[0.1], 1), Err(Error::Shape(_))));
        assert!(ContinuousSsm::new(1, 1, vec![0.0], vec![0.0]).is_err());
        assert!(ContinuousSsm::<f64>::new(0, 1, vec![], vec![]).is_err());
    }

    #[test]
    fn a_bar_lies_in_unit_interval() {
        let mut rng = crate::rng::stream_rng(11, 0);
        let (step, _, _) = random_instance(&mut rng, 8, 3, 4);
        assert!(step.a_bar.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn scan_sequential_hand_unrolled() {
        let step = scalar_step(3, 0.5, 1.0, 1.0);
        let (y, state) = scan_sequential(&step, &[1.0, 0.0, 0.0], &[0.0]).unwrap();
        assert_eq!(y, vec![1.0, 0.5, 0.25]);
        assert_eq!(state.t, 3);
        // Zero input stays zero by linearity.
        let (y0, s0) = scan_sequential(&step, &[0.0; 3], &[0.0]).unwrap();
        assert_eq!(y0, vec![0.0; 3]);
        assert_eq!(s0.h, vec![0.0]);
    }

    #[test]
    fn scan_matches_double_sum_oracle() {
        let mut rng = crate::rng::stream_rng(5, 0);
        let (step, x, skip) = random_instance(&mut rng, 16, 3, 4);
        let (y, _) = scan_sequential(&step, &x, &skip).unwrap();
        let want = double_sum_oracle(&step, &x, &skip);
        for (a, b) in y.iter().zip(&want) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn recurrent_fold_is_bitwise_equal_to_scan() {
        let mut rng = crate::rng::stream_rng(6, 0);
        let (step, x, skip) = random_instance(&mut rng, 64, 2, 3);
        let (y_seq, final_state) = scan_sequential(&step, &x, &skip).unwrap();
        let mut state = ScanState::zeros(2, 3);
        let mut y_t = vec![0.0; 2];
        for t in 0..64 {
            recurrent_step(&mut state, step.token(t), &x[t * 2..(t + 1) * 2], &skip, &mut y_t).unwrap();
            assert_eq!(&y_seq[t * 2..(t + 1) * 2], y_t.as_slice(), "token {t}");
        }
        assert_eq!(state.h, final_state.h);
        // Zero state and input give zero output and state.
        let mut state = ScanState::<f64>::zeros(2, 3);
        recurrent_step(&mut state, step.token(0), &[0.0; 2], &skip, &mut y_t).unwrap();
        assert_eq!(y_t, vec![0.0; 2]);
        assert!(state.h.iter().all(|&h| h == 0.0));
    }

    #[test]
    fn parallel_scan_matches_sequential() {
        let mut rng = crate::rng::stream_rng(7, 0);
        for l in [1usize, 2, 3, 8, 9, 17, 64, 65] {
            let (step, x, skip) = random_instance(&mut rng, l, 2, 4);
            let (y_seq, _) = scan_sequential(&step, &x, &skip).unwrap();
            let y_par = scan_parallel(&step, &x, &skip).unwrap();
            for (a, b) in y_seq.iter().zip(&y_par) {
                assert!((a - b).abs() < 1e-12, "l={l}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn parallel_scan_single_token_is_degenerate() {
        let step = scalar_step(1, 0.3, 2.0, 1.5).clone();
        let y = scan_parallel(&step, &[2.0], &[0.25]).unwrap();
        // y = C*B_bar*x + skip*x = 1.5*2*2 + 0.25*2.
        assert!((y[0] - (1.5 * 2.0 * 2.0 + 0.25 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn lti_kernel_and_convolution() {
        // A_bar = 0.5, B_bar = 1, C = 1, L = 3 -> kernel (1, 0.5, 0.25).
        let k = LtiKernel::new(&[0.5], &[1.0], &[1.0], 1, 1, 3).unwrap();
        assert_eq!(k.taps(), &[1.0, 0.5, 0.25]);
        // Unit impulse reproduces the kernel.
        let y = lti_convolution(&k, &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(y, vec![1.0, 0.5, 0.25]);
        // Random LTI instance agrees with the scan (zero skip).
        let mut rng = crate::rng::stream_rng(9, 0);
        let (d, n, l) = (3usize, 4usize, 32usize);
        let a: Vec<f64> = (0..d * n).map(|_| -rng.gen_range(0.05..3.0)).collect();
        let ssm = ContinuousSsm::new(d, n, a, vec![0.0; d]).unwrap();
        let b_tok: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c_tok: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dt_tok: Vec<f64> = (0..d).map(|_| rng.gen_range(0.01..0.8)).collect();
        let b: Vec<f64> = (0..l).flat_map(|_| b_tok.clone()).collect();
        let c: Vec<f64> = (0..l).flat_map(|_| c_tok.clone()).collect();
        let delta: Vec<f64> = (0..l).flat_map(|_| dt_tok.clone()).collect();
        let step = discretize(&ssm, &b, &c, &delta, l).unwrap();
        let x: Vec<f64> = (0..l * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let kernel = LtiKernel::from_step(&step).unwrap();
        let y_conv = lti_convolution(&kernel, &x).unwrap();
        let (y_scan, _) = scan_sequential(&step, &x, &vec![0.0; d]).unwrap();
        for (a, b) in y_conv.iter().zip(&y_scan) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn lti_kernel_rejects_token_varying_step() {
        let mut rng = crate::rng::stream_rng(10, 0);
        let (step, _, _) = random_instance(&mut rng, 8, 2, 3);
        assert!(matches!(LtiKernel::from_step(&step), Err(Error::InvariantViolation(_))));
    }

    #[test]
    fn convolution_checks_kernel_length() {
        let k = LtiKernel::new(&[0.5], &[1.0], &[1.0], 1, 1, 3).unwrap();
        assert!(matches!(lti_convolution(&k, &[1.0, 0.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn causality_is_exact() {
        let mut rng = crate::rng::stream_rng(12, 0);
        let (step, mut x, skip) = random_instance(&mut rng, 20, 2, 3);
        let (y_base, _) = scan_sequential(&step, &x, &skip).unwrap();
        let j = 11;
        for d in 0..2 {
            x[j * 2 + d] += 3.5;
        }
        let (y_pert, _) = scan_sequential(&step, &x, &skip).unwrap();
        for i in 0..j {
            for d in 0..2 {
                assert_eq!(y_base[i * 2 + d], y_pert[i * 2 + d], "output {i} changed");
            }
        }
    }

    #[test]
    fn state_stays_within_stability_bound() {
        let mut rng = crate::rng::stream_rng(13, 0);
        let (step, x, _) = random_instance(&mut rng, 256, 2, 3);
        let dn = 2 * 3;
        let mut max_abar: f64 = 0.0;
        for &v in step.a_bar() {
            max_abar = max_abar.max(v);
        }
        let mut max_bx: f64 = 0.0;
        for t in 0..256 {
            for d in 0..2 {
                for i in 0..3 {
                    max_bx = max_bx.max((step.b_bar[t * dn + d * 3 + i] * x[t * 2 + d]).abs());
                }
            }
        }
        let bound = max_bx / (1.0 - max_abar);
        let mut h_all = Vec::new();
        scan_sequential_recording(&step, &x, &[0.0, 0.0], &mut h_all).unwrap();
        for &h in &h_all {
            assert!(h.abs() <= bound + 1e-12, "|h| = {} exceeds bound {bound}", h.abs());
        }
    }

    #[test]
    fn f32_scans_agree_at_single_precision() {
        let mut rng = crate::rng::stream_rng(14, 0);
        let (step, x, skip) = random_instance(&mut rng, 33, 2, 4);
        let to32 = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
        let step32 = DiscretizedStep {
            l: step.l,
            d_inner: step.d_inner,
            n: step.n,
            a_bar: to32(&step.a_bar),
            b_bar: to32(&step.b_bar),
            c: to32(&step.c),
            delta: to32(&step.delta),
        };
        let x32 = to32(&x);
        let skip32 = to32(&skip);
        let (y_seq, _) = scan_sequential(&step32, &x32, &skip32).unwrap();
        let y_par = scan_parallel(&step32, &x32, &skip32).unwrap();
        for (a, b) in y_seq.iter().zip(&y_par) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }
}
