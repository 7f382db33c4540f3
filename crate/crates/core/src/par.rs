//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the helpers fan work out over rayon; without
//! it (or after [`set_sequential`]) they run on the calling thread. Results
//! are always produced in index order and every reduction built on top of
//! these helpers sums partials in that order, so output does not depend on
//! the thread count.

use std::sync::atomic::{AtomicBool, Ordering};

use crate::tensor::Scalar;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Forces every helper in this module onto the calling thread.
pub fn set_sequential(on: bool) {
    FORCE_SEQUENTIAL.store(on, Ordering::SeqCst);
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.load(Ordering::Relaxed)
}

/// Maps `f` over `0..n`, collecting results in index order.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Calls `f(i, chunk)` for each `chunk_len`-sized piece of `data`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if chunk_len == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if is_parallel() {
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    data.chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

/// Fixed group size for per-sample partial reductions. Independent of the
/// thread count so that summation order never changes.
pub const REDUCE_GROUP: usize = 4;

/// Computes one partial per group of [`REDUCE_GROUP`] consecutive items
/// and folds the partials left to right.
pub fn grouped_sum<T, F>(n: usize, len: usize, f: F) -> Vec<T>
where
    T: Scalar,
    F: Fn(std::ops::Range<usize>, &mut [T]) + Sync + Send,
{
    let groups = n.div_ceil(REDUCE_GROUP);
    let partials = map_range(groups, |g| {
        let mut acc = vec![T::zero(); len];
        let lo = g * REDUCE_GROUP;
        f(lo..(lo + REDUCE_GROUP).min(n), &mut acc);
        acc
    });
    let mut total = vec![T::zero(); len];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t = *t + v;
        }
    }
    total
}
