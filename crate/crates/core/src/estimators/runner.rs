//! Fan paths out to a worker pool and collect results in path-index order.

use rayon::prelude::*;

/// Evaluate `f(path_index)` for `0..n` on `workers` threads. The returned
/// vector is ordered by path index whatever the scheduling.
pub fn map_paths<R, F>(n: usize, workers: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(u64) -> R + Sync + Send,
{
    if workers <= 1 {
        return (0..n as u64).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool construction");
    pool.install(|| (0..n as u64).into_par_iter().map(&f).collect())
}
