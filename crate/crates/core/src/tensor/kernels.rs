use std::cell::Cell;

use rayon::prelude::*;

use super::Scalar;

thread_local! {
    static MACS: Cell<u64> = const { Cell::new(0) };
}

/// Multiply-accumulates issued by forward matrix products on this thread
/// since the last reset.
pub fn mac_count() -> u64 {
    MACS.with(Cell::get)
}

pub fn reset_mac_count() {
    MACS.with(|c| c.set(0));
}

pub(crate) fn record_macs(n: u64) {
    MACS.with(|c| c.set(c.get() + n));
}

const PAR_THRESHOLD: usize = 1 << 15;

/// `out[m,n] += a[m,k] * b[k,n]`, all row-major.
pub(crate) fn gemm_acc<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let row = |i: usize, dst: &mut [T]| {
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (d, &bv) in dst.iter_mut().zip(brow) {
                *d = *d + av * bv;
            }
        }
    };
    if m > 1 && m * k * n >= PAR_THRESHOLD {
        out.par_chunks_mut(n).enumerate().for_each(|(i, dst)| row(i, dst));
    } else {
        out.chunks_mut(n).enumerate().for_each(|(i, dst)| row(i, dst));
    }
}

pub(crate) fn gemm<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    gemm_acc(m, k, n, a, b, &mut out);
    out
}

pub(crate) fn transpose2<T: Scalar>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); src.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

/// Independent products `out[i] = a[a_off[i]] * b[b_off[i]]` for a batch of
/// `m×k · k×n` matrices.
pub(crate) fn batched_gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_off: &[usize],
    b: &[T],
    b_off: &[usize],
) -> Vec<T> {
    let mut out = vec![T::zero(); a_off.len() * m * n];
    let work = |(i, dst): (usize, &mut [T])| {
        let aa = &a[a_off[i]..a_off[i] + m * k];
        let bb = &b[b_off[i]..b_off[i] + k * n];
        gemm_acc(m, k, n, aa, bb, dst);
    };
    if a_off.len() > 1 && a_off.len() * m * k * n >= PAR_THRESHOLD {
        out.par_chunks_mut(m * n).enumerate().for_each(work);
    } else {
        out.chunks_mut(m * n).enumerate().for_each(work);
    }
    out
}

pub(crate) fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Walks `shape` in row-major order and yields, for each position, the
/// offset under each of the given stride sets.
pub(crate) fn for_each_offset2(
    shape: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let rank = shape.len();
    let total: usize = shape.iter().product();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    for lin in 0..total {
        f(lin, oa, ob);
        let mut d = rank;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < shape[d] {
                break;
            }
            oa -= sa[d] * shape[d];
            ob -= sb[d] * shape[d];
            idx[d] = 0;
        }
    }
}

/// Gathers `src` viewed through `strides` over `shape` into a contiguous buffer.
pub(crate) fn strided_gather<T: Scalar>(src: &[T], shape: &[usize], strides: &[usize]) -> Vec<T> {
    let total: usize = shape.iter().product();
    let mut out = Vec::with_capacity(total);
    let zeros = vec![0; shape.len()];
    for_each_offset2(shape, strides, &zeros, |_, o, _| out.push(src[o]));
    out
}
