//! Layer primitives on flat NCHW buffers, each with an explicit backward pass.

use std::fmt::Debug;

use num_traits::Float;

/// Scalar type the network runs in. `f32` for training, `f64` for gradient checks.
pub trait Real: Float + Default + Debug + Send + Sync + std::iter::Sum + 'static {
    /// `C = alpha * A B + beta * C` with arbitrary row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn of_f64(x: f64) -> Self;

    fn as_f64(self) -> f64;
}

fn check_extent(len: usize, rows: usize, cols: usize, rs: isize, cs: isize) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows as isize - 1) * rs + (cols as isize - 1) * cs;
    assert!(rs >= 0 && cs >= 0 && (last as usize) < len, "gemm operand out of bounds");
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                check_extent(a.len(), m, k, rsa, csa);
                check_extent(b.len(), k, n, rsb, csb);
                check_extent(c.len(), m, n, rsc, csc);
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every element addressed by the strides lies inside the
                // slices (checked above) and `c` is uniquely borrowed.
                unsafe {
                    $gemm(m, k, n, alpha, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), rsc, csc)
                }
            }

            fn of_f64(x: f64) -> Self {
                x as $t
            }

            fn as_f64(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// Convolution geometry: 3x3 kernel, stride 1, zero "same" padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
}

pub const KERNEL: usize = 3;

impl ConvShape {
    pub fn patch_len(&self) -> usize {
        self.c_in * KERNEL * KERNEL
    }

    pub fn in_len(&self) -> usize {
        self.c_in * self.h * self.w
    }

    pub fn out_len(&self) -> usize {
        self.c_out * self.h * self.w
    }
}

/// Unfolds one image `[c_in, h, w]` into `[c_in * 9, h * w]` patch columns.
pub fn im2col<T: Real>(s: &ConvShape, input: &[T], cols: &mut [T]) {
    let (h, w) = (s.h, s.w);
    let hw = h * w;
    for ci in 0..s.c_in {
        let plane = &input[ci * hw..(ci + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut cols[((ci * KERNEL + ky) * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = T::zero();
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates patch-column gradients into `grad_input`.
pub fn col2im<T: Real>(s: &ConvShape, cols: &[T], grad_input: &mut [T]) {
    let (h, w) = (s.h, s.w);
    let hw = h * w;
    for ci in 0..s.c_in {
        let plane = &mut grad_input[ci * hw..(ci + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &cols[((ci * KERNEL + ky) * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, &v)| *d = *d + v),
                        1 => dst.iter_mut().zip(src).for_each(|(d, &v)| *d = *d + v),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, &v)| *d = *d + v),
                    }
                }
            }
        }
    }
}

/// Batched convolution. Returns the output `[n, c_out, h, w]` and the patch
/// columns of every sample, which the backward pass reuses.
pub fn conv_forward<T: Real>(s: &ConvShape, n: usize, input: &[T], weight: &[T], bias: &[T]) -> (Vec<T>, Vec<T>) {
    let hw = s.h * s.w;
    let k = s.patch_len();
    let mut cols = vec![T::zero(); n * k * hw];
    let mut out = vec![T::zero(); n * s.out_len()];
    for b in 0..n {
        let col = &mut cols[b * k * hw..(b + 1) * k * hw];
        im2col(s, &input[b * s.in_len()..(b + 1) * s.in_len()], col);
        let y = &mut out[b * s.out_len()..(b + 1) * s.out_len()];
        for (co, chunk) in y.chunks_mut(hw).enumerate() {
            chunk.fill(bias[co]);
        }
        T::gemm(s.c_out, k, hw, T::one(), weight, k as isize, 1, col, hw as isize, 1, T::one(), y, hw as isize, 1);
    }
    (out, cols)
}

/// Gradients of [`conv_forward`]. `grad_input` is skipped when `None`.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Real>(
    s: &ConvShape,
    n: usize,
    cols: &[T],
    weight: &[T],
    grad_out: &[T],
    grad_weight: &mut [T],
    grad_bias: &mut [T],
    mut grad_input: Option<&mut [T]>,
) {
    let hw = s.h * s.w;
    let k = s.patch_len();
    let mut dcols = vec![T::zero(); if grad_input.is_some() { k * hw } else { 0 }];
    for b in 0..n {
        let dy = &grad_out[b * s.out_len()..(b + 1) * s.out_len()];
        let col = &cols[b * k * hw..(b + 1) * k * hw];
        for (co, chunk) in dy.chunks(hw).enumerate() {
            grad_bias[co] = grad_bias[co] + chunk.iter().copied().sum();
        }
        // dW[co, k] += dY[co, hw] * cols[k, hw]^T
        T::gemm(
            s.c_out,
            hw,
            k,
            T::one(),
            dy,
            hw as isize,
            1,
            col,
            1,
            hw as isize,
            T::one(),
            grad_weight,
            k as isize,
            1,
        );
        if let Some(dx) = grad_input.as_deref_mut() {
            // dcols[k, hw] = W^T[k, co] * dY[co, hw]
            T::gemm(
                k,
                s.c_out,
                hw,
                T::one(),
                weight,
                1,
                k as isize,
                dy,
                hw as isize,
                1,
                T::zero(),
                &mut dcols,
                hw as isize,
                1,
            );
            col2im(s, &dcols, &mut dx[b * s.in_len()..(b + 1) * s.in_len()]);
        }
    }
}

pub fn relu_forward<T: Real>(x: &mut [T]) {
    x.iter_mut().for_each(|v| *v = v.max(T::zero()));
}

/// Masks `grad` in place by the positive entries of the ReLU output `y`.
pub fn relu_backward<T: Real>(y: &[T], grad: &mut [T]) {
    grad.iter_mut().zip(y).for_each(|(g, &v)| {
        if v <= T::zero() {
            *g = T::zero();
        }
    });
}

/// 2x2 max pooling, stride 2, over `planes` maps of `h x w` (both even).
/// Returns the pooled maps and the flat input index of each maximum
/// (first maximum on ties).
pub fn maxpool_forward<T: Real>(planes: usize, h: usize, w: usize, x: &[T]) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut idx = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for y in 0..oh {
            for xo in 0..ow {
                let i0 = base + 2 * y * w + 2 * xo;
                let mut best = i0;
                for cand in [i0 + 1, i0 + w, i0 + w + 1] {
                    if x[cand] > x[best] {
                        best = cand;
                    }
                }
                out.push(x[best]);
                idx.push(best as u32);
            }
        }
    }
    (out, idx)
}

pub fn maxpool_backward<T: Real>(idx: &[u32], grad_out: &[T], grad_input: &mut [T]) {
    for (&i, &g) in idx.iter().zip(grad_out) {
        grad_input[i as usize] = grad_input[i as usize] + g;
    }
}

/// `y[n, out] = x[n, in] W^T + b` with `W` stored `[out, in]`.
pub fn dense_forward<T: Real>(n: usize, d_in: usize, d_out: usize, x: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let mut y: Vec<T> = (0..n).flat_map(|_| bias.iter().copied()).collect();
    T::gemm(
        n,
        d_in,
        d_out,
        T::one(),
        x,
        d_in as isize,
        1,
        weight,
        1,
        d_in as isize,
        T::one(),
        &mut y,
        d_out as isize,
        1,
    );
    y
}

#[allow(clippy::too_many_arguments)]
pub fn dense_backward<T: Real>(
    n: usize,
    d_in: usize,
    d_out: usize,
    x: &[T],
    weight: &[T],
    grad_out: &[T],
    grad_weight: &mut [T],
    grad_bias: &mut [T],
) -> Vec<T> {
    for row in grad_out.chunks(d_out) {
        grad_bias.iter_mut().zip(row).for_each(|(b, &g)| *b = *b + g);
    }
    // dW[out, in] += dY^T[out, n] * X[n, in]
    T::gemm(
        d_out,
        n,
        d_in,
        T::one(),
        grad_out,
        1,
        d_out as isize,
        x,
        d_in as isize,
        1,
        T::one(),
        grad_weight,
        d_in as isize,
        1,
    );
    let mut dx = vec![T::zero(); n * d_in];
    T::gemm(
        n,
        d_out,
        d_in,
        T::one(),
        grad_out,
        d_out as isize,
        1,
        weight,
        d_in as isize,
        1,
        T::zero(),
        &mut dx,
        d_in as isize,
        1,
    );
    dx
}

/// Inverted dropout: applies a precomputed keep-mask already scaled by `1/(1-p)`.
pub fn dropout_apply<T: Real>(x: &mut [T], mask: &[T]) {
    x.iter_mut().zip(mask).for_each(|(v, &m)| *v = *v * m);
}

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Real>(logits: &[T], n_classes: usize) -> Vec<T> {
    let mut out = logits.to_vec();
    for row in out.chunks_mut(n_classes) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        row.iter_mut().for_each(|v| *v = *v / sum);
    }
    out
}
