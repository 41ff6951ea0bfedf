//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) these fan out over rayon; without it
//! the same closures run sequentially. Reductions are split into fixed-size
//! chunks whose partial results are combined in index order, so the floating
//! point result does not depend on the thread count or on the feature flag.

use std::ops::Range;

use ndarray::{ArrayD, ArrayViewMut1, Axis};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length used by the deterministic reductions.
pub const CHUNK: usize = 2048;

/// `true` when built with the rayon backend.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

/// Evaluate `f(i)` for `i in 0..n` and collect in index order.
pub fn map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Apply `f(index, item)` to every element of a mutable slice.
pub fn for_each_mut<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter_mut().enumerate().for_each(|(i, x)| f(i, x));
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter_mut().enumerate().for_each(|(i, x)| f(i, x));
    }
}

/// Run `f` on every 1-D lane of `arr` along `axis`.
pub fn for_each_lane_mut<A, F>(arr: &mut ArrayD<A>, axis: usize, f: F)
where
    A: Send + Sync,
    F: Fn(ArrayViewMut1<'_, A>) + Sync + Send,
{
    let lanes = arr.lanes_mut(Axis(axis));
    #[cfg(feature = "parallel")]
    {
        ndarray::Zip::from(lanes).par_for_each(f);
    }
    #[cfg(not(feature = "parallel"))]
    {
        ndarray::Zip::from(lanes).for_each(f);
    }
}

/// Deterministic sum of `body(range)` over fixed chunks of `0..n`.
pub fn chunked_sum<F>(n: usize, body: F) -> f64
where
    F: Fn(Range<usize>) -> f64 + Sync + Send,
{
    chunked_fold(n, || 0.0, |acc, r| *acc += body(r)).into_iter().sum()
}

/// Fold each fixed chunk of `0..n` into its own accumulator; the
/// accumulators come back in chunk order for the caller to merge.
pub fn chunked_fold<T, I, F>(n: usize, init: I, body: F) -> Vec<T>
where
    T: Send,
    I: Fn() -> T + Sync + Send,
    F: Fn(&mut T, Range<usize>) + Sync + Send,
{
    let chunks = n.div_ceil(CHUNK);
    map_range(chunks, |c| {
        let start = c * CHUNK;
        let end = (start + CHUNK).min(n);
        let mut acc = init();
        body(&mut acc, start..end);
        acc
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunked_sum_matches_sequential_order() {
        let n = 3 * CHUNK + 17;
        let values: Vec<f64> = (0..n).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let total = chunked_sum(n, |r| values[r].iter().sum::<f64>());
        let manual: f64 = values.chunks(CHUNK).map(|c| c.iter().sum::<f64>()).sum();
        assert_eq!(total.to_bits(), manual.to_bits());
    }

    #[test]
    fn map_range_preserves_order() {
        let v = map_range(1000, |i| i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == 2 * i));
    }
}
