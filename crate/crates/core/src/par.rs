//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the row kernels fan out over rayon; without it
//! the same closures run in a plain loop. Every kernel here writes each output
//! element from exactly one closure invocation, so results are bit-identical
//! between the two paths and across thread counts.

/// Below this many output elements the sequential path is used even when
/// rayon is available.
pub const PAR_THRESHOLD: usize = 1 << 14;

/// Whether the crate was built with rayon kernels.
pub const PARALLEL: bool = cfg!(feature = "parallel");

/// Environment variable capping the worker pool size.
pub const THREADS_ENV: &str = "NORMLAB_THREADS";

/// Applies `f(row_index, row)` to every `row_len`-sized chunk of `out`.
pub fn for_each_row_mut<F>(out: &mut [f64], row_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Send + Sync,
{
    if row_len == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        if out.len() >= PAR_THRESHOLD {
            use rayon::prelude::*;
            out.par_chunks_mut(row_len)
                .enumerate()
                .for_each(|(i, row)| f(i, row));
            return;
        }
    }
    out.chunks_mut(row_len)
        .enumerate()
        .for_each(|(i, row)| f(i, row));
}

/// Maps `f` over `items`, preserving order.
pub fn map_collect<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Send + Sync,
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

/// Installs a global worker pool sized from `NORMLAB_THREADS` when set.
/// Returns the thread count in effect. A no-op without the `parallel` feature.
pub fn init_from_env() -> usize {
    #[cfg(feature = "parallel")]
    {
        if let Some(n) = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&n| n > 0)
        {
            // Fails only if a pool was already installed; keep that one.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_see_their_index() {
        let mut out = vec![0.0; 3 * PAR_THRESHOLD];
        for_each_row_mut(&mut out, 3, |i, row| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (i * 3 + j) as f64;
            }
        });
        assert!(out.iter().enumerate().all(|(k, &v)| v == k as f64));
    }

    #[test]
    fn map_preserves_order() {
        let xs: Vec<u32> = (0..1000).collect();
        let ys = map_collect(&xs, |x| x * 2);
        assert_eq!(ys, xs.iter().map(|x| x * 2).collect::<Vec<_>>());
    }
}
