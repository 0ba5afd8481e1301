//! Data-parallel trial execution with a sequential fallback.
//!
//! Both paths return results in index order, and every trial derives its own
//! rng stream from its index, so outputs are identical whichever path runs.
//! The `parallel` feature (default) routes through rayon; without it the
//! crate builds fully sequential.

/// Map `f` over `0..n` sequentially.
pub fn map_indexed_seq<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..n).map(f).collect()
}

/// Map `f` over `0..n` on the rayon pool.
#[cfg(feature = "parallel")]
pub fn map_indexed_par<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

/// Map `f` over `0..n`, parallel when the `parallel` feature is enabled.
#[cfg(feature = "parallel")]
pub fn map_indexed<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    map_indexed_par(n, f)
}

/// Map `f` over `0..n`, parallel when the `parallel` feature is enabled.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    map_indexed_seq(n, f)
}
