//! Row-parallel execution helpers.
//!
//! Kernels are written against these helpers so the same code runs on a
//! rayon pool (feature `parallel`, on by default) or as a plain loop. With the
//! feature disabled, [`Exec::Parallel`] silently runs sequentially.

/// Rows handed to one rayon task; smaller splits cost more than they save.
pub const MIN_ROWS_PER_TASK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

/// Runs `f(row, slice)` over consecutive `width`-sized rows of `data`.
pub fn rows_mut<T, F>(exec: Exec, data: &mut [T], width: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if width == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        data.par_chunks_mut(width)
            .with_min_len(MIN_ROWS_PER_TASK)
            .enumerate()
            .for_each(|(r, row)| f(r, row));
        return;
    }
    let _ = exec;
    data.chunks_mut(width).enumerate().for_each(|(r, row)| f(r, row));
}

/// Like [`rows_mut`] over two row-aligned buffers of different widths.
pub fn rows2_mut<A, B, F>(exec: Exec, a: &mut [A], wa: usize, b: &mut [B], wb: usize, f: F)
where
    A: Send,
    B: Send,
    F: Fn(usize, &mut [A], &mut [B]) + Sync + Send,
{
    if wb == 0 {
        return rows_mut(exec, a, wa, |r, ra| f(r, ra, &mut []));
    }
    if wa == 0 {
        return rows_mut(exec, b, wb, |r, rb| f(r, &mut [], rb));
    }
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        a.par_chunks_mut(wa)
            .zip(b.par_chunks_mut(wb))
            .with_min_len(MIN_ROWS_PER_TASK)
            .enumerate()
            .for_each(|(r, (ra, rb))| f(r, ra, rb));
        return;
    }
    a.chunks_mut(wa)
        .zip(b.chunks_mut(wb))
        .enumerate()
        .for_each(|(r, (ra, rb))| f(r, ra, rb));
}

/// Evaluates `f(i)` for `i in 0..n`, preserving order.
pub fn map_range<T, F>(exec: Exec, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}
