//! Rayon-backed executor for the core's fan-out points.

use std::sync::Arc;

use rayon::prelude::*;
use rayon::ThreadPool;
use tsal_core::parallel::Executor;

/// Runs jobs on a rayon pool: the global one, or a dedicated pool with a
/// fixed thread count. Results come back in index order either way.
#[derive(Clone, Default)]
pub struct Rayon {
    pool: Option<Arc<ThreadPool>>,
}

impl Rayon {
    /// `jobs = 0` uses the global pool.
    pub fn new(jobs: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        if jobs == 0 {
            return Ok(Self { pool: None });
        }
        let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
        Ok(Self { pool: Some(Arc::new(pool)) })
    }

    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        match &self.pool {
            Some(pool) => pool.install(f),
            None => f(),
        }
    }
}

impl Executor for Rayon {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.install(|| (0..n).into_par_iter().map(f).collect())
    }
}
