//! Worker pool capped by `CODERT_THREADS` (default 1).
//!
//! Results always come back in index order, so any reduction over them is
//! independent of the thread count.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use rayon::prelude::*;

pub const THREADS_ENV: &str = "CODERT_THREADS";

pub fn num_threads() -> usize {
    std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|&n| n >= 1).unwrap_or(1)
}

fn pool(threads: usize) -> std::sync::Arc<rayon::ThreadPool> {
    static POOLS: OnceLock<Mutex<HashMap<usize, std::sync::Arc<rayon::ThreadPool>>>> = OnceLock::new();
    let mut pools = POOLS.get_or_init(Default::default).lock().expect("pool registry poisoned");
    pools
        .entry(threads)
        .or_insert_with(|| {
            std::sync::Arc::new(rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool"))
        })
        .clone()
}

/// `(0..n).map(f)` evaluated on up to [`num_threads`] workers.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let threads = num_threads();
    if threads <= 1 || n <= 1 {
        (0..n).map(f).collect()
    } else {
        pool(threads).install(|| (0..n).into_par_iter().map(f).collect())
    }
}
