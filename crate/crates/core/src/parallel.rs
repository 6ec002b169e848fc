//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) these dispatch to rayon; without it
//! they run sequentially. Results are always collected in input order so the
//! output of every caller is independent of the thread count.

pub fn num_threads() -> usize {
    #[cfg(feature = "parallel")]
    return rayon::current_num_threads();

    #[cfg(not(feature = "parallel"))]
    return 1;
}

/// Maps `f` over `0..n` and collects the results in index order.
pub fn par_map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }

    #[cfg(not(feature = "parallel"))]
    (0..n).map(f).collect()
}

/// Maps `f` over a slice and collects the results in slice order.
pub fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }

    #[cfg(not(feature = "parallel"))]
    items.iter().map(f).collect()
}

/// Runs `f` with at most `threads` worker threads. `threads == 0` keeps the
/// global pool. Without the `parallel` feature this just calls `f`.
pub fn with_threads<R, F>(threads: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    {
        if threads == 0 {
            return f();
        }
        match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }

    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let out = par_map_range(1000, |i| i * 2);
        assert!(out.iter().enumerate().all(|(i, &v)| v == 2 * i));
        let words = ["a", "bb", "ccc"];
        assert_eq!(par_map(&words, |w| w.len()), vec![1, 2, 3]);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let work = || par_map_range(257, |i| (i as f64).sqrt().sin());
        assert_eq!(with_threads(1, work), with_threads(3, work));
    }
}
