//! Per-sample parallelism.
//!
//! Work is split into fixed-size chunks; each chunk is folded sequentially
//! and the chunk results are merged in chunk order. The grouping does not
//! depend on the number of threads, so parallel and sequential execution
//! produce bitwise-identical sums.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Samples folded together before a merge.
pub const CHUNK_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    Sequential,
    /// Uses the rayon pool when the `parallel` feature is enabled, otherwise
    /// falls back to sequential execution.
    #[default]
    Parallel,
}

impl ExecMode {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecMode::Parallel
    }
}

/// Folds `items` chunk by chunk and merges the chunk accumulators in order.
pub fn chunked_fold<T, A, I, F, M>(items: &[T], mode: ExecMode, init: I, fold: F, mut merge: M) -> A
where
    T: Sync,
    A: Send,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, &T) + Sync,
    M: FnMut(&mut A, A),
{
    let run_chunk = |chunk: &[T]| {
        let mut acc = init();
        for item in chunk {
            fold(&mut acc, item);
        }
        acc
    };
    let partials: Vec<A> = if mode.is_parallel() {
        #[cfg(feature = "parallel")]
        {
            items.par_chunks(CHUNK_SIZE).map(run_chunk).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            unreachable!()
        }
    } else {
        items.chunks(CHUNK_SIZE).map(run_chunk).collect()
    };
    let mut total = init();
    for part in partials {
        merge(&mut total, part);
    }
    total
}

/// Order-preserving map.
pub fn map<T, R, F>(items: &[T], mode: ExecMode, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    if mode.is_parallel() {
        #[cfg(feature = "parallel")]
        {
            return items.par_iter().map(&f).collect();
        }
    }
    items.iter().map(f).collect()
}

/// Caps the global thread pool. Must run before any parallel work; later
/// calls are ignored.
pub fn set_thread_count(threads: usize) {
    #[cfg(feature = "parallel")]
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_bitwise() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin() * 1e3).collect();
        let sum = |mode| {
            chunked_fold(&xs, mode, || 0.0f64, |a, x| *a += x, |a, b| *a += b)
        };
        assert_eq!(
            sum(ExecMode::Sequential).to_bits(),
            sum(ExecMode::Parallel).to_bits()
        );
        let sq = map(&xs, ExecMode::Parallel, |x| x * x);
        assert_eq!(sq, map(&xs, ExecMode::Sequential, |x| x * x));
    }
}
