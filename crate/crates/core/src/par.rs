//! Data-parallel mapping helpers with a sequential fallback.
//!
//! Hot construction and assembly loops are expressed as independent maps
//! over slices or index ranges. With the `parallel` feature (default) they
//! run on the rayon thread pool; without it the same closures run
//! sequentially, which keeps single-threaded builds and benchmark baselines
//! free of any thread-pool dependency.
//!
//! # Expected invariants
//! - Outputs are positionally identical between the parallel and sequential
//!   paths; closures are pure functions of their input element or index.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over a slice, in parallel when the `parallel` feature is on.
pub(crate) fn map_slice<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Maps `f` over `0..n`, in parallel when the `parallel` feature is on.
pub(crate) fn map_range<U, F>(n: usize, f: F) -> Vec<U>
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
