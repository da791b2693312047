//! Optional worker pool for per-image fan-out.
//!
//! Results always land in pre-assigned slots, so output order never depends
//! on scheduling.

use rayon::prelude::*;
use rayon::ThreadPool;

/// Environment variable selecting the worker-pool size.
pub const WORKERS_ENV: &str = "ADASTUDENT_WORKERS";

pub struct Workers {
    pool: Option<ThreadPool>,
}

impl Workers {
    pub fn serial() -> Self {
        Workers { pool: None }
    }

    pub fn new(threads: usize) -> Self {
        if threads <= 1 {
            return Self::serial();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .ok();
        Workers { pool }
    }

    /// Pool sized from [`WORKERS_ENV`], serial when unset or unparsable.
    pub fn from_env() -> Self {
        let threads = std::env::var(WORKERS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .unwrap_or(1);
        Self::new(threads)
    }

    pub fn threads(&self) -> usize {
        self.pool.as_ref().map_or(1, |p| p.current_num_threads())
    }

    /// `(0..n).map(f)` with slot `i` holding `f(i)`.
    pub fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match &self.pool {
            None => (0..n).map(f).collect(),
            Some(pool) => pool.install(|| (0..n).into_par_iter().map(f).collect()),
        }
    }
}

impl Default for Workers {
    fn default() -> Self {
        Self::serial()
    }
}

impl std::fmt::Debug for Workers {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Workers").field("threads", &self.threads()).finish()
    }
}
