//! Batch execution strategy.
//!
//! Per-section work (segmentation, refinement loops) and per-iteration
//! reviewer calls are independent, so they can fan out over a rayon pool
//! when the `parallel` feature is enabled. Without it every batch runs on
//! the calling thread. Result order always follows input order.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Up to `n` items in flight at once.
    #[cfg(feature = "parallel")]
    Parallel(usize),
}

impl Execution {
    /// Parallel with `n` workers when available, sequential otherwise.
    pub fn with_parallelism(n: usize) -> Self {
        #[cfg(feature = "parallel")]
        {
            if n > 1 {
                return Execution::Parallel(n);
            }
        }
        let _ = n;
        Execution::Sequential
    }

    /// Maps `f` over `items`, keeping input order in the output.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match *self {
            Execution::Sequential => items.iter().map(f).collect(),
            #[cfg(feature = "parallel")]
            Execution::Parallel(n) => {
                use rayon::prelude::*;
                match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
                    Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
                    Err(e) => {
                        tracing::warn!("thread pool unavailable ({e}); running sequentially");
                        items.iter().map(f).collect()
                    }
                }
            }
        }
    }
}

impl Execution {
    /// Maps `f` over a small fan-out (one iteration's reviewer panel). In
    /// parallel mode this runs on whichever rayon pool is current, so nested
    /// use inside [`Execution::map`] shares that pool's workers.
    pub fn fan_out<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match *self {
            Execution::Sequential => items.iter().map(f).collect(),
            #[cfg(feature = "parallel")]
            Execution::Parallel(_) => {
                use rayon::prelude::*;
                items.par_iter().map(f).collect()
            }
        }
    }
}

impl Default for Execution {
    fn default() -> Self {
        Execution::with_parallelism(4)
    }
}
