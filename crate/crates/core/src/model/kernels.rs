//! Dense kernels over `[sample][cell][channel]` activation maps.

use crate::env::{CELLS, HEIGHT, WIDTH};
use crate::scalar::Scalar;

/// `out (rows x n) = a (rows x k) * w (k x n) + bias`.
pub(crate) fn affine<T: Scalar>(a: &[T], w: &[T], bias: &[T], rows: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(rows * n);
    for _ in 0..rows {
        out.extend_from_slice(bias);
    }
    T::gemm(rows, k, n, T::one(), a, (k as isize, 1), w, (n as isize, 1), T::one(), &mut out, (n as isize, 1));
    out
}

/// Accumulate `dw += aᵀ · dy` and `db += column sums of dy`.
pub(crate) fn affine_param_grads<T: Scalar>(
    a: &[T],
    dy: &[T],
    rows: usize,
    k: usize,
    n: usize,
    dw: &mut [T],
    db: &mut [T],
) {
    T::gemm(k, rows, n, T::one(), a, (1, k as isize), dy, (n as isize, 1), T::one(), dw, (n as isize, 1));
    for row in dy.chunks_exact(n) {
        for (g, &v) in db.iter_mut().zip(row) {
            *g += v;
        }
    }
}

/// Accumulate `da += dy · wᵀ`.
pub(crate) fn affine_input_grad<T: Scalar>(dy: &[T], w: &[T], rows: usize, k: usize, n: usize, da: &mut [T]) {
    T::gemm(rows, n, k, T::one(), dy, (n as isize, 1), w, (1, n as isize), T::one(), da, (k as isize, 1));
}

pub(crate) fn relu_in_place<T: Scalar>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zero gradient entries whose forward activation was clamped.
pub(crate) fn relu_backward<T: Scalar>(activated: &[T], grad: &mut [T]) {
    for (g, &a) in grad.iter_mut().zip(activated) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 3x3 patches with zero padding: `(batch * CELLS) x (9 * channels)`, tap-major.
pub(crate) fn im2col<T: Scalar>(x: &[T], batch: usize, channels: usize) -> Vec<T> {
    let width = 9 * channels;
    let mut cols = vec![T::zero(); batch * CELLS * width];
    for b in 0..batch {
        let src = &x[b * CELLS * channels..(b + 1) * CELLS * channels];
        for r in 0..HEIGHT {
            for c in 0..WIDTH {
                let row = &mut cols[(b * CELLS + r * WIDTH + c) * width..][..width];
                for (tap, chunk) in row.chunks_exact_mut(channels).enumerate() {
                    let (rr, cc) = (r + tap / 3, c + tap % 3);
                    if rr == 0 || cc == 0 || rr > HEIGHT || cc > WIDTH {
                        continue;
                    }
                    let cell = (rr - 1) * WIDTH + (cc - 1);
                    chunk.copy_from_slice(&src[cell * channels..(cell + 1) * channels]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add patch gradients back onto the map.
pub(crate) fn col2im<T: Scalar>(dcols: &[T], batch: usize, channels: usize) -> Vec<T> {
    let width = 9 * channels;
    let mut dx = vec![T::zero(); batch * CELLS * channels];
    for b in 0..batch {
        let dst = &mut dx[b * CELLS * channels..(b + 1) * CELLS * channels];
        for r in 0..HEIGHT {
            for c in 0..WIDTH {
                let row = &dcols[(b * CELLS + r * WIDTH + c) * width..][..width];
                for (tap, chunk) in row.chunks_exact(channels).enumerate() {
                    let (rr, cc) = (r + tap / 3, c + tap % 3);
                    if rr == 0 || cc == 0 || rr > HEIGHT || cc > WIDTH {
                        continue;
                    }
                    let cell = (rr - 1) * WIDTH + (cc - 1);
                    for (d, &g) in dst[cell * channels..(cell + 1) * channels].iter_mut().zip(chunk) {
                        *d += g;
                    }
                }
            }
        }
    }
    dx
}

/// Global max and mean over cells, per sample and channel.
///
/// Returns `(pooled, argmax)` where `pooled` is `batch x 2C` laid out as
/// `[max_0..max_C, mean_0..mean_C]` and `argmax` is `batch x C` cell
/// indices (first maximum wins).
pub(crate) fn global_pool<T: Scalar>(x: &[T], batch: usize, channels: usize) -> (Vec<T>, Vec<usize>) {
    let mut pooled = vec![T::zero(); batch * 2 * channels];
    let mut argmax = vec![0usize; batch * channels];
    let inv = T::of(1.0 / CELLS as f64);
    for b in 0..batch {
        let map = &x[b * CELLS * channels..(b + 1) * CELLS * channels];
        let (maxes, means) = pooled[b * 2 * channels..(b + 1) * 2 * channels].split_at_mut(channels);
        let arg = &mut argmax[b * channels..(b + 1) * channels];
        maxes.copy_from_slice(&map[..channels]);
        for (cell, px) in map.chunks_exact(channels).enumerate() {
            for ch in 0..channels {
                let v = px[ch];
                if v > maxes[ch] {
                    maxes[ch] = v;
                    arg[ch] = cell;
                }
                means[ch] += v;
            }
        }
        for m in means.iter_mut() {
            *m *= inv;
        }
    }
    (pooled, argmax)
}

/// Adjoint of [`global_pool`], accumulated into `dx`.
pub(crate) fn global_pool_backward<T: Scalar>(
    dpooled: &[T],
    argmax: &[usize],
    batch: usize,
    channels: usize,
    dx: &mut [T],
) {
    let inv = T::of(1.0 / CELLS as f64);
    for b in 0..batch {
        let dp = &dpooled[b * 2 * channels..(b + 1) * 2 * channels];
        let (dmax, dmean) = dp.split_at(channels);
        let map = &mut dx[b * CELLS * channels..(b + 1) * CELLS * channels];
        for px in map.chunks_exact_mut(channels) {
            for ch in 0..channels {
                px[ch] += dmean[ch] * inv;
            }
        }
        for ch in 0..channels {
            map[argmax[b * channels + ch] * channels + ch] += dmax[ch];
        }
    }
}

/// Concatenate each cell's features with its sample's pooled vector.
pub(crate) fn inject<T: Scalar>(x: &[T], pooled: &[T], batch: usize, channels: usize) -> Vec<T> {
    let out_ch = 3 * channels;
    let mut out = Vec::with_capacity(batch * CELLS * out_ch);
    for b in 0..batch {
        let p = &pooled[b * 2 * channels..(b + 1) * 2 * channels];
        for px in x[b * CELLS * channels..(b + 1) * CELLS * channels].chunks_exact(channels) {
            out.extend_from_slice(px);
            out.extend_from_slice(p);
        }
    }
    out
}

/// Split the gradient of [`inject`]'s output into the cell part (returned)
/// and the pooled part (summed over cells, `batch x 2C`).
pub(crate) fn inject_backward<T: Scalar>(dout: &[T], batch: usize, channels: usize) -> (Vec<T>, Vec<T>) {
    let out_ch = 3 * channels;
    let mut dx = Vec::with_capacity(batch * CELLS * channels);
    let mut dpooled = vec![T::zero(); batch * 2 * channels];
    for b in 0..batch {
        let dp = &mut dpooled[b * 2 * channels..(b + 1) * 2 * channels];
        for px in dout[b * CELLS * out_ch..(b + 1) * CELLS * out_ch].chunks_exact(out_ch) {
            dx.extend_from_slice(&px[..channels]);
            for (d, &g) in dp.iter_mut().zip(&px[channels..]) {
                *d += g;
            }
        }
    }
    (dx, dpooled)
}

/// Numerically stable softmax of one logit row into `out`.
pub(crate) fn softmax_into<T: Scalar>(logits: &[T], out: &mut [T]) {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}
