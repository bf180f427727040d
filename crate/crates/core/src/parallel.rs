//! Execution policy for the data-parallel loops (batch gradients, dataset
//! construction, repetitions). Without the `parallel` feature every policy
//! runs sequentially with the same chunking, so results are unchanged.

use serde::{Deserialize, Serialize};

/// Chunk size used for gradient reduction in strict-deterministic mode.
pub const STRICT_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Sequential,
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Execution {
    pub mode: Mode,
    /// Fixed reduction chunking, independent of the thread count.
    pub strict: bool,
}

impl Default for Execution {
    fn default() -> Self {
        Self {
            mode: Mode::Parallel,
            strict: true,
        }
    }
}

impl Execution {
    pub fn sequential() -> Self {
        Self {
            mode: Mode::Sequential,
            strict: true,
        }
    }

    pub fn parallel(strict: bool) -> Self {
        Self {
            mode: Mode::Parallel,
            strict,
        }
    }

    /// Number of samples each worker handles for a batch of `batch` samples.
    pub fn chunk_size(&self, batch: usize) -> usize {
        if self.strict {
            return STRICT_CHUNK;
        }
        let threads = threads().max(1);
        batch.div_ceil(threads).max(1)
    }

    pub fn is_parallel(&self) -> bool {
        cfg!(feature = "parallel") && self.mode == Mode::Parallel
    }
}

pub fn threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Maps `f` over `items` (mutably), in parallel when permitted. Output order
/// always matches input order.
pub fn map_mut<I, O, F>(exec: Execution, items: &mut [I], f: F) -> Vec<O>
where
    I: Send,
    O: Send,
    F: Fn(usize, &mut I) -> O + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return items
            .par_iter_mut()
            .enumerate()
            .map(|(i, item)| f(i, item))
            .collect();
    }
    let _ = exec;
    items
        .iter_mut()
        .enumerate()
        .map(|(i, item)| f(i, item))
        .collect()
}

/// Maps `f` over `0..n`, in parallel when permitted, preserving order.
pub fn map_range<O, F>(exec: Execution, n: usize, f: F) -> Vec<O>
where
    O: Send,
    F: Fn(usize) -> O + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Runs `f` inside a pool of `jobs` threads (or inline when `jobs <= 1` or the
/// feature is disabled).
pub fn with_jobs<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    if jobs > 1 {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
            return pool.install(f);
        }
    }
    let _ = jobs;
    f()
}
