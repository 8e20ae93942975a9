//! Dense loops shared by the operation kernels.

use crate::real::Real;

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (mut s0, mut s1, mut s2, mut s3) = (T::zero(), T::zero(), T::zero(), T::zero());
    let chunks = n / 4;
    for c in 0..chunks {
        let i = c * 4;
        s0 = s0 + a[i] * b[i];
        s1 = s1 + a[i + 1] * b[i + 1];
        s2 = s2 + a[i + 2] * b[i + 2];
        s3 = s3 + a[i + 3] * b[i + 3];
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for i in chunks * 4..n {
        s = s + a[i] * b[i];
    }
    s
}

/// Transpose a row-major `rows × cols` matrix.
pub fn transpose<T: Real>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// `c[m×n] += op(a)[m×k] · op(b)[k×n]` where `op` transposes when the flag
/// is set (`a` is then stored `k×m`, `b` stored `n×k`).
pub fn gemm<T: Real>(
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    ta: bool,
    b: &[T],
    tb: bool,
    c: &mut [T],
) {
    let a_buf;
    let a = if ta {
        a_buf = transpose(a, k, m);
        &a_buf[..]
    } else {
        &a[..m * k]
    };
    if tb {
        for i in 0..m {
            let ar = &a[i * k..(i + 1) * k];
            let cr = &mut c[i * n..(i + 1) * n];
            for (j, cv) in cr.iter_mut().enumerate() {
                *cv = *cv + dot(ar, &b[j * k..(j + 1) * k]);
            }
        }
    } else {
        for i in 0..m {
            let cr = &mut c[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                if av == T::zero() {
                    continue;
                }
                let br = &b[p * n..(p + 1) * n];
                for (cv, &bv) in cr.iter_mut().zip(br) {
                    *cv = *cv + av * bv;
                }
            }
        }
    }
}

/// Row-major strides of `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Permute axes: output axis `i` is input axis `perm[i]`.
pub fn permute<T: Real>(data: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let rank = shape.len();
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    // innermost axis handled as a strided run
    let last = rank - 1;
    let run = out_shape[last];
    let run_stride = src_strides[last];
    loop {
        for r in 0..run {
            out.push(data[src + r * run_stride]);
        }
        let mut ax = last;
        loop {
            if ax == 0 {
                return out;
            }
            ax -= 1;
            idx[ax] += 1;
            src += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= src_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

pub fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// `(outer, len, inner)` decomposition around `axis`.
pub fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
