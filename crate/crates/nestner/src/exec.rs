//! Data-parallel mapping over frozen state, with a sequential fallback.
//!
//! Training mutates parameters and stays single-threaded; scoring, feature
//! extraction, and prediction read a frozen model, so they may fan out
//! across sentences. Output order always matches input order, making the
//! parallel and sequential paths byte-for-byte interchangeable.

/// Map `f` over `items`, in parallel when the `parallel` feature is on.
/// Results come back in input order either way.
#[cfg(feature = "parallel")]
pub fn map_slice<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_slice<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Sequential map with the same signature, kept callable regardless of
/// features so the two paths can be compared directly.
pub fn map_slice_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.iter().map(f).collect()
}
