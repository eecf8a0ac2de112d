//! Execution helpers for the data-parallel inner loops.
//!
//! Every parallel loop in this crate goes through [`map_collect`]: an indexed
//! map whose output order is fixed by the index, so results are bit-identical
//! no matter how many worker threads run it. With the `parallel` feature
//! disabled the same entry point compiles to a plain sequential loop.
//! [`map_collect_seq`] is always available; tests and benchmarks use it to
//! compare the two paths.

#[cfg(feature = "parallel")]
pub fn map_collect<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_collect<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    map_collect_seq(n, f)
}

/// Sequential reference path for [`map_collect`].
pub fn map_collect_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}
