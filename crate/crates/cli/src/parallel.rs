//! Deterministic worker pool: results always come back in input order, so
//! thread count never changes any output byte. `XFCSI_THREADS` caps the
//! worker count.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Effective worker count: available parallelism capped by `XFCSI_THREADS`.
pub fn worker_count() -> usize {
    let available = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    match std::env::var("XFCSI_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(cap) if cap >= 1 => available.min(cap),
        _ => available,
    }
}

/// Apply `f` to every index `0..n`, in parallel, collecting results in index
/// order.
pub fn par_map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = worker_count().min(n.max(1));
    if workers <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let value = f(i);
                results.lock().expect("worker poisoned")[i] = Some(value);
            });
        }
    });
    let collected = results.into_inner().expect("pool poisoned");
    collected
        .into_iter()
        .map(|v| v.expect("every index computed"))
        .collect()
}
