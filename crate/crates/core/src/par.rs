//! Data-parallel map helpers with a sequential fallback.
//!
//! The inner loops of this crate (oracle labeling, workload generation,
//! per-example gradient computation) are embarrassingly parallel over
//! independent items. With the `parallel` feature (default) they run on
//! rayon; without it the same entry points run sequentially. Results are
//! always collected in input order, so the two paths produce identical
//! output and downstream reductions stay deterministic regardless of
//! thread count.

/// Map over a slice, collecting results in input order.
pub fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(&f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Map over `0..n`, collecting results in index order.
pub fn map_indices<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(&f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Sequential reference path, kept available under all feature sets so the
/// bench suite can compare it against the parallel path directly.
pub fn map_collect_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}
