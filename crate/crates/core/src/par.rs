//! Row-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the helpers fan out over rayon's pool once the
//! work estimate crosses [`MIN_PARALLEL_WORK`]; otherwise they run in order on
//! the calling thread. Both paths visit rows with identical per-row
//! arithmetic, so results never depend on which path ran.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many scalar operations the rayon split costs more than it saves.
pub const MIN_PARALLEL_WORK: usize = 1 << 14;

/// True when the `parallel` feature is on, the pool has more than one
/// thread, and `work` is large enough to be worth splitting.
#[inline]
pub fn use_parallel(work: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        work >= MIN_PARALLEL_WORK && rayon::current_num_threads() > 1
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = work;
        false
    }
}

/// `(0..n).map(f)` collected in index order.
pub fn map_indexed<T, F>(n: usize, work: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if use_parallel(work) {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = work;
    (0..n).map(f).collect()
}

/// Calls `f(row_index, row)` for each `cols`-wide row of `data`.
pub fn for_each_row_mut<F>(data: &mut [f64], cols: usize, work: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if cols == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if use_parallel(work) {
        data.par_chunks_mut(cols)
            .enumerate()
            .for_each(|(j, row)| f(j, row));
        return;
    }
    let _ = work;
    for (j, row) in data.chunks_mut(cols).enumerate() {
        f(j, row);
    }
}

/// `items.iter_mut().map(f)` collected in order, possibly concurrently.
pub fn map_mut<T, R, F>(items: &mut [T], parallel: bool, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(usize, &mut T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        return items
            .par_iter_mut()
            .enumerate()
            .map(|(k, t)| f(k, t))
            .collect();
    }
    let _ = parallel;
    items.iter_mut().enumerate().map(|(k, t)| f(k, t)).collect()
}
