//! Inner loops. All kernels accumulate into `out` and run in a fixed order so
//! results are bit-reproducible.

use super::Real;

#[inline]
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Dot product with eight independent partial sums.
#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let base = c * 8;
        for lane in 0..8 {
            acc[lane] += a[base + lane] * b[base + lane];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `out[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm_nn<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &aip) in a_row.iter().enumerate() {
            if aip != T::zero() {
                axpy(aip, &b[p * n..(p + 1) * n], out_row);
            }
        }
    }
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`
pub(crate) fn gemm_nt<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] += dot(a_row, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `out[m×n] += a[k×m]ᵀ · b[k×n]`
pub(crate) fn gemm_tn<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &api) in a_row.iter().enumerate() {
            if api != T::zero() {
                axpy(api, b_row, &mut out[i * n..(i + 1) * n]);
            }
        }
    }
}

/// Max-subtracted softmax of one row. Masked-out entries (mask == false) get
/// probability exactly zero. At least one entry must be unmasked.
pub(crate) fn softmax_row<T: Real>(x: &[T], mask: Option<&[bool]>, out: &mut [T]) {
    let keep = |j: usize| mask.is_none_or(|m| m[j]);
    let mut max = T::neg_infinity();
    for (j, &v) in x.iter().enumerate() {
        if keep(j) && v > max {
            max = v;
        }
    }
    let mut sum = T::zero();
    for (j, (&v, o)) in x.iter().zip(out.iter_mut()).enumerate() {
        if keep(j) {
            let e = (v - max).exp();
            *o = e;
            sum += e;
        } else {
            *o = T::zero();
        }
    }
    let inv = T::one() / sum;
    for o in out.iter_mut() {
        *o *= inv;
    }
}
