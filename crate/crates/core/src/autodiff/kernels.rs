//! Dense kernels shared by the tape and the tape-free forward path.
//!
//! Both paths must produce bit-identical values, so every forward
//! computation in the crate goes through these functions. Matrices are
//! row-major.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::signal::{CAP_DB, SI_SDR_EPS};

/// Dot product with four interleaved accumulators.
///
/// The fixed lane assignment keeps the summation order deterministic while
/// letting the compiler vectorise the loop.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Number of frames needed to cover `len` samples; the tail is zero padded.
pub fn num_frames(len: usize, frame_len: usize, hop: usize) -> usize {
    if len <= frame_len {
        1
    } else {
        (len - frame_len).div_ceil(hop) + 1
    }
}

/// Slices `x` into overlapping frames, `[num_frames × frame_len]`.
pub fn frame(x: &[f64], frame_len: usize, hop: usize) -> Vec<f64> {
    let n = num_frames(x.len(), frame_len, hop);
    let mut out = vec![0.0; n * frame_len];
    for f in 0..n {
        let start = f * hop;
        let end = (start + frame_len).min(x.len());
        if start < end {
            out[f * frame_len..f * frame_len + (end - start)].copy_from_slice(&x[start..end]);
        }
    }
    out
}

/// Adjoint of [`frame`]: scatter-adds frame gradients back onto the signal.
pub fn frame_backward(d_frames: &[f64], frame_len: usize, hop: usize, d_x: &mut [f64]) {
    let n = d_frames.len() / frame_len;
    for f in 0..n {
        let start = f * hop;
        let row = &d_frames[f * frame_len..(f + 1) * frame_len];
        for (t, g) in row.iter().enumerate() {
            if let Some(slot) = d_x.get_mut(start + t) {
                *slot += g;
            }
        }
    }
}

/// Sums overlapping frames back into a signal of `len` samples.
pub fn overlap_add(frames: &[f64], frame_len: usize, hop: usize, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let n = frames.len() / frame_len;
    for f in 0..n {
        let start = f * hop;
        let row = &frames[f * frame_len..(f + 1) * frame_len];
        for (t, v) in row.iter().enumerate() {
            if let Some(slot) = out.get_mut(start + t) {
                *slot += v;
            }
        }
    }
    out
}

pub fn overlap_add_backward(d_out: &[f64], frame_len: usize, hop: usize, d_frames: &mut [f64]) {
    let n = d_frames.len() / frame_len;
    for f in 0..n {
        let start = f * hop;
        for t in 0..frame_len {
            if let Some(g) = d_out.get(start + t) {
                d_frames[f * frame_len + t] += g;
            }
        }
    }
}

/// `A · Wᵀ` for `A: [n × k]`, `W: [m × k]`, giving `[n × m]`.
pub fn matmul_t(a: &[f64], n: usize, k: usize, w: &[f64], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let ai = &a[i * k..(i + 1) * k];
        let row = &mut out[i * m..(i + 1) * m];
        for (j, o) in row.iter_mut().enumerate() {
            *o = dot(ai, &w[j * k..(j + 1) * k]);
        }
    }
    out
}

/// Accumulates `dA += dC · W` and `dW += dCᵀ · A`.
#[allow(clippy::too_many_arguments)]
pub fn matmul_t_backward(
    d_out: &[f64],
    a: &[f64],
    n: usize,
    k: usize,
    w: &[f64],
    m: usize,
    d_a: Option<&mut [f64]>,
    d_w: Option<&mut [f64]>,
) {
    if let Some(d_a) = d_a {
        for i in 0..n {
            let da_i = &mut d_a[i * k..(i + 1) * k];
            for j in 0..m {
                let g = d_out[i * m + j];
                if g != 0.0 {
                    axpy(g, &w[j * k..(j + 1) * k], da_i);
                }
            }
        }
    }
    if let Some(d_w) = d_w {
        for i in 0..n {
            let a_i = &a[i * k..(i + 1) * k];
            for j in 0..m {
                let g = d_out[i * m + j];
                if g != 0.0 {
                    axpy(g, a_i, &mut d_w[j * k..(j + 1) * k]);
                }
            }
        }
    }
}

/// Adds `bias` (length `cols`) to every row in place.
pub fn add_bias(a: &mut [f64], bias: &[f64]) {
    for row in a.chunks_exact_mut(bias.len()) {
        for (x, b) in row.iter_mut().zip(bias) {
            *x += b;
        }
    }
}

pub fn relu(a: &mut [f64]) {
    for x in a {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + math::exp(-x))
    } else {
        let e = math::exp(x);
        e / (1.0 + e)
    }
}

pub fn sigmoid(a: &mut [f64]) {
    for x in a {
        *x = sigmoid_scalar(*x);
    }
}

/// Copies columns `[start, start+width)` of a `[rows × cols]` matrix.
pub fn column_block(a: &[f64], cols: usize, start: usize, width: usize) -> Vec<f64> {
    let rows = a.len() / cols;
    let mut out = Vec::with_capacity(rows * width);
    for r in 0..rows {
        out.extend_from_slice(&a[r * cols + start..r * cols + start + width]);
    }
    out
}

/// Per-sample residual share `(x - Σ_k s_k) / M` of the consistency projection.
pub fn consistency_share(sources: &[&[f64]], mixture: &[f64]) -> Vec<f64> {
    let m = sources.len() as f64;
    let mut out = Vec::with_capacity(mixture.len());
    for (i, &x) in mixture.iter().enumerate() {
        let mut total = 0.0;
        for s in sources {
            total += s[i];
        }
        out.push((x - total) / m);
    }
    out
}

/// Backward of the SI-SDR value `v` with upstream gradient `g`.
///
/// Uses the closed form `v = k·ln(a² / (p·q − (1−ε)·a²))` with
/// `a = ŷᵀy`, `p = ‖ŷ‖²`, `q = ‖y‖²`, `k = 10/ln 10`, which is algebraically
/// identical to the projection form used in the forward pass. Clamped
/// values have zero gradient.
pub fn si_sdr_backward(
    estimate: &[f64],
    target: &[f64],
    value: f64,
    g: f64,
    d_estimate: Option<&mut [f64]>,
    d_target: Option<&mut [f64]>,
) {
    if value >= CAP_DB || value <= -CAP_DB {
        return;
    }
    let mut a = 0.0;
    let mut p = 0.0;
    let mut q = 0.0;
    for (e, y) in estimate.iter().zip(target) {
        a += e * y;
        p += e * e;
        q += y * y;
    }
    let k = 10.0 / core::f64::consts::LN_10;
    let d = p * q - (1.0 - SI_SDR_EPS) * a * a;
    let dv_da = k * (2.0 / a + 2.0 * (1.0 - SI_SDR_EPS) * a / d);
    let dv_dp = -k * q / d;
    let dv_dq = -k * p / d;
    if let Some(de) = d_estimate {
        for ((de, e), y) in de.iter_mut().zip(estimate).zip(target) {
            *de += g * (dv_da * y + 2.0 * dv_dp * e);
        }
    }
    if let Some(dy) = d_target {
        for ((dy, e), y) in dy.iter_mut().zip(estimate).zip(target) {
            *dy += g * (dv_da * e + 2.0 * dv_dq * y);
        }
    }
}
