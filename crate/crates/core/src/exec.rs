//! Work-distribution helpers.
//!
//! All fan-out in this crate (terminal-candidate QPs, sweep arms, seed
//! batches, verification suites) goes through [`map_collect`]. With the
//! `parallel` feature it maps over a rayon parallel iterator; without it the
//! loop is sequential. Output order always matches input order, so results
//! are identical across both modes and across thread counts.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `items`, collecting results in input order.
#[cfg(feature = "parallel")]
pub fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.par_iter().map(f).collect()
}

/// Map `f` over `items`, collecting results in input order.
#[cfg(not(feature = "parallel"))]
pub fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Sequential twin of [`map_collect`], available regardless of features.
/// The criterion bench compares the two on identical workloads.
pub fn map_collect_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree_in_order() {
        let items: Vec<u64> = (0..257).collect();
        let square = |x: &u64| x * x;
        assert_eq!(map_collect(&items, square), map_collect_seq(&items, square));
    }
}
