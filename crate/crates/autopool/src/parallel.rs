//! Deterministic data-parallel helpers.
//!
//! Every helper here produces output in a fixed order that does not depend on
//! the number of worker threads, so seeded runs stay bitwise reproducible.
//! With the `parallel` feature disabled the same functions run sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..n`, collecting results in index order.
pub fn map_indices<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Map `f` over fixed-size chunks of `items`, collecting per-chunk results in
/// chunk order. Callers fold the chunk results sequentially, which keeps
/// reductions independent of thread count.
pub fn map_chunks<T, R, F>(items: &[T], chunk_size: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&[T]) -> R + Sync + Send,
{
    assert!(chunk_size > 0);
    #[cfg(feature = "parallel")]
    {
        items.par_chunks(chunk_size).map(|c| f(c)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.chunks(chunk_size).map(|c| f(c)).collect()
    }
}

/// Apply `f` to each row of a row-major buffer. Rows are disjoint, so the
/// result is identical however the rows are scheduled.
pub fn for_each_row<F>(buf: &mut [f64], row_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    assert!(row_len > 0 && buf.len() % row_len == 0);
    #[cfg(feature = "parallel")]
    {
        buf.par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    }
    #[cfg(not(feature = "parallel"))]
    {
        buf.chunks_mut(row_len).enumerate().for_each(|(i, row)| f(i, row));
    }
}
