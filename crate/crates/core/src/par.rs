//! Scoped data parallelism for pure per-index work.
//!
//! The worker count is `available_parallelism`, capped by the
//! `BREGDIV_THREADS` environment variable when it holds a positive integer.
//! Results are collected by index, so output never depends on thread count.

use std::num::NonZeroUsize;

pub const THREADS_ENV: &str = "BREGDIV_THREADS";

pub fn max_threads() -> usize {
    let hw = std::thread::available_parallelism().map_or(1, NonZeroUsize::get);
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(cap) if cap >= 1 => hw.min(cap),
        _ => hw,
    }
}

/// `(0..n).map(f)` evaluated on up to [`max_threads`] workers.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let threads = max_threads().min(n);
    if threads <= 1 {
        return (0..n).map(f).collect();
    }
    let chunk = n.div_ceil(threads);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let lo = t * chunk;
                let hi = ((t + 1) * chunk).min(n);
                s.spawn(move || (lo..hi).map(f).collect::<Vec<T>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}
