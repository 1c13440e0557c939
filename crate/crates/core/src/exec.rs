//! Index-ordered parallel map with a sequential fallback.
//!
//! With the `parallel` feature the work runs on a rayon pool bounded by
//! `jobs`; without it, or with `jobs == 1`, items run in order on the
//! calling thread. Output order always follows the index.

/// Worker count to use when the caller asks for "all cores" (`jobs == 0`).
pub fn available_jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// `(0..count).map(f)`, run on up to `jobs` threads (`0` means all cores).
pub fn map_indexed<T, F>(count: usize, jobs: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        let jobs = if jobs == 0 { available_jobs() } else { jobs };
        if jobs > 1 && count > 1 {
            use rayon::prelude::*;
            match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
                Ok(pool) => return pool.install(|| (0..count).into_par_iter().map(&f).collect()),
                Err(e) => log::warn!("falling back to sequential execution: {e}"),
            }
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = jobs;
    (0..count).map(f).collect()
}
