//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) batch maps run on the rayon pool.
//! Every call site maps independent items and collects results in input
//! order, so outputs are bit-identical with the feature on or off. The
//! sequential variant stays available for the benchmark comparison.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[cfg(feature = "parallel")]
pub fn map_items<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_items<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Always-sequential map, kept for benchmarking against [`map_items`].
pub fn map_items_seq<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}
