//! Row-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the closures run on the rayon pool; without it
//! they run in order on the calling thread. Every closure writes one disjoint
//! output chunk and accumulates sequentially within it, so results are
//! bitwise identical either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many output entries the work runs sequentially regardless.
const MIN_PARALLEL_LEN: usize = 16 * 1024;

/// Calls `f(row_index, row)` for every `width`-sized chunk of `out`.
pub fn for_each_row<F>(out: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Send + Sync,
{
    if width == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if out.len() >= MIN_PARALLEL_LEN {
        out.par_chunks_mut(width)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
        return;
    }
    for_each_row_sequential(out, width, f)
}

pub fn for_each_row_sequential<F>(out: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]),
{
    if width == 0 {
        return;
    }
    out.chunks_mut(width)
        .enumerate()
        .for_each(|(i, row)| f(i, row));
}

/// Order-preserving map over independent jobs (seeds, grid configs).
pub fn map_jobs<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        items.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.into_iter().map(f).collect()
    }
}

pub fn map_jobs_sequential<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    F: Fn(T) -> R,
{
    items.into_iter().map(f).collect()
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
