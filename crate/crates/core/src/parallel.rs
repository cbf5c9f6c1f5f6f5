//! Worker-pool plumbing. Results never depend on the worker count: callers
//! split work into fixed units and reduce them in index order.

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "UQ_THREADS";

/// Worker count: `explicit` if given, else `UQ_THREADS`, else all cores.
pub fn worker_count(explicit: Option<usize>) -> usize {
    explicit
        .or_else(|| std::env::var(THREADS_ENV).ok()?.trim().parse().ok())
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `f` inside a pool of [`worker_count`] threads.
pub fn install<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    let n = worker_count(threads);
    match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}
