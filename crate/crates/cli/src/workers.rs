use rayon::ThreadPool;

use crate::error::{PipelineError, Result};

pub const WORKERS_ENV: &str = "RS_BENCH_WORKERS";

/// Worker count from `RS_BENCH_WORKERS`, or the number of CPUs.
pub fn worker_count() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(PipelineError::Config(format!(
                "{WORKERS_ENV} must be a positive integer, got `{v}`"
            ))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

pub fn pool() -> Result<ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count()?)
        .build()
        .map_err(|e| PipelineError::Config(format!("cannot start worker pool: {e}")))
}
