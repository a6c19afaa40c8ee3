//! Scalar-generic numeric kernels shared by the autodiff tape and the
//! inference engine. Both paths call these in the same order, so a
//! double-precision incremental decode reproduces the tape's forward values
//! exactly.

use num_traits::Float;

pub const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[inline]
pub fn cast<T: Float>(x: f64) -> T {
    T::from(x).expect("representable constant")
}

/// `out += x · W` with `W` stored row-major as `[x.len() × out.len()]`.
#[inline]
pub fn accumulate_row<T: Float>(out: &mut [T], x: &[T], w: &[T]) {
    let n_out = out.len();
    debug_assert_eq!(w.len(), x.len() * n_out);
    for (i, &xv) in x.iter().enumerate() {
        let row = &w[i * n_out..(i + 1) * n_out];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o = *o + xv * wv;
        }
    }
}

/// `out = bias + x · W`.
#[inline]
pub fn affine_row<T: Float>(out: &mut [T], x: &[T], w: &[T], bias: &[T]) {
    out.copy_from_slice(bias);
    accumulate_row(out, x, w);
}

#[inline]
pub fn dot<T: Float>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc = acc + x * y;
    }
    acc
}

#[inline]
pub fn sigmoid<T: Float>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn softsign<T: Float>(x: T) -> T {
    x / (T::one() + x.abs())
}

#[inline]
pub fn softplus<T: Float>(x: T) -> T {
    // log(1 + e^x) without overflow.
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn relu<T: Float>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

/// Gated linear unit over one row of `2c` values: the first half is the
/// value, the second half the gate.
#[inline]
pub fn glu_row<T: Float>(out: &mut [T], x: &[T]) {
    let c = out.len();
    debug_assert_eq!(x.len(), 2 * c);
    for k in 0..c {
        out[k] = x[k] * sigmoid(x[c + k]);
    }
}

/// Residual merge used by every block: `(a + b) · √0.5`.
#[inline]
pub fn residual<T: Float>(a: T, b: T) -> T {
    (a + b) * cast::<T>(SQRT_HALF)
}

/// Softmax restricted to `[lo, hi)`; entries outside the window are zero.
pub fn softmax_window<T: Float>(logits: &[T], out: &mut [T], lo: usize, hi: usize) {
    debug_assert!(lo < hi && hi <= logits.len());
    let mut max = logits[lo];
    for &l in &logits[lo + 1..hi] {
        if l > max {
            max = l;
        }
    }
    let mut sum = T::zero();
    for (j, o) in out.iter_mut().enumerate() {
        if j < lo || j >= hi {
            *o = T::zero();
        } else {
            let e = (logits[j] - max).exp();
            *o = e;
            sum = sum + e;
        }
    }
    for o in &mut out[lo..hi] {
        *o = *o / sum;
    }
}

/// Index of the first maximum.
pub fn argmax<T: Float>(row: &[T]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Sinusoidal position encoding value for timestep `i`, channel `k` of `d`:
/// `sin(rate·i / 10000^(k/d))` for even `k`, `cos(…)` for odd `k`.
#[inline]
pub fn positional_value<T: Float>(rate: T, i: usize, k: usize, d: usize) -> T {
    let angle = positional_angle(rate, i, k, d);
    if k % 2 == 0 {
        angle.sin()
    } else {
        angle.cos()
    }
}

#[inline]
pub fn positional_angle<T: Float>(rate: T, i: usize, k: usize, d: usize) -> T {
    let denom = cast::<T>(10000.0).powf(cast::<T>(k as f64) / cast::<T>(d as f64));
    rate * cast::<T>(i as f64) / denom
}

/// Effective weight `g · v / ‖v‖` where the norm runs over every axis except
/// the last (output-channel) one.
pub fn weight_norm<T: Float>(v: &[T], g: &[T], out: &mut [T]) {
    let c_out = g.len();
    let norms = channel_norms(v, c_out);
    for (idx, (o, &vv)) in out.iter_mut().zip(v).enumerate() {
        let ch = idx % c_out;
        *o = g[ch] * vv / norms[ch];
    }
}

pub fn channel_norms<T: Float>(v: &[T], c_out: usize) -> Vec<T> {
    let mut sq = vec![T::zero(); c_out];
    for (idx, &vv) in v.iter().enumerate() {
        let ch = idx % c_out;
        sq[ch] = sq[ch] + vv * vv;
    }
    sq.into_iter().map(T::sqrt).collect()
}
