//! Per-sample data parallelism.
//!
//! Work items are independent forward/backward passes; results always come
//! back in input order so reductions stay bit-identical whatever the thread
//! count.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    /// Uses the rayon pool when the `parallel` feature is on, otherwise runs
    /// sequentially.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// `f(i, &items[i])` for every item, in order.
pub fn map_collect<T, U, F>(mode: Execution, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
        }
        _ => items.iter().enumerate().map(|(i, t)| f(i, t)).collect(),
    }
}

/// Runs `f` inside a pool of `workers` threads (`0` keeps the global pool).
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    #[cfg(feature = "parallel")]
    if workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
        return Ok(pool.install(f));
    }
    #[cfg(not(feature = "parallel"))]
    if workers > 1 {
        return Err(Error::invalid("built without the `parallel` feature; --workers must be 0 or 1"));
    }
    Ok(f())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_modes_agree_and_keep_order() {
        let items: Vec<u64> = (0..100).collect();
        let f = |i: usize, v: &u64| (i as u64) * 1000 + v * v;
        let a = map_collect(Execution::Sequential, &items, f);
        let b = map_collect(Execution::Parallel, &items, f);
        assert_eq!(a, b);
        assert_eq!(a[7], 7049);
    }

    #[test]
    fn pool_runs_closure() {
        assert_eq!(with_workers(0, || 6).unwrap(), 6);
        assert_eq!(with_workers(1, || 7).unwrap(), 7);
        if cfg!(feature = "parallel") {
            assert_eq!(with_workers(2, || 5).unwrap(), 5);
        } else {
            assert!(with_workers(2, || 5).is_err());
        }
    }
}
