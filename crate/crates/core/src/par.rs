//! Data-parallel helpers. With the `parallel` feature (default) these fan out
//! over a rayon pool; without it they run sequentially. Output order always
//! matches input order, so callers get identical results either way.

/// How a batch of independent work items is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Parallel over the given number of worker threads (0 = rayon default).
    Parallel(usize),
}

impl Execution {
    pub fn from_workers(workers: usize) -> Self {
        if workers <= 1 {
            Execution::Sequential
        } else {
            Execution::Parallel(workers)
        }
    }
}

/// Map `f` over `items`, preserving order.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Map `f` over `0..n`, preserving order.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Run `f` over `items` under an explicit execution mode.
pub fn map_with<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match exec {
        Execution::Sequential => items.iter().map(f).collect(),
        #[cfg(feature = "parallel")]
        Execution::Parallel(workers) => {
            use rayon::prelude::*;
            match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
                Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
                Err(e) => {
                    log::warn!("could not build thread pool ({e}); running sequentially");
                    items.iter().map(f).collect()
                }
            }
        }
        #[cfg(not(feature = "parallel"))]
        Execution::Parallel(_) => items.iter().map(f).collect(),
    }
}
