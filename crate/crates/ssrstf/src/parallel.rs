//! Deterministic data parallelism helpers.
//!
//! Output buffers are split into disjoint rows, so results are bit-identical
//! regardless of thread count. The pool size is capped by the
//! `SSRSTF_THREADS` environment variable.

use std::sync::OnceLock;

use rayon::prelude::*;

static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();

/// Work sizes below this run inline; thread handoff costs more than it saves.
const MIN_PAR_ELEMENTS: usize = 1 << 15;

fn pool() -> &'static rayon::ThreadPool {
    POOL.get_or_init(|| {
        let threads = std::env::var("SSRSTF_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .unwrap_or_else(|| {
                std::thread::available_parallelism()
                    .map(|n| n.get())
                    .unwrap_or(1)
            });
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool construction")
    })
}

pub fn num_threads() -> usize {
    pool().current_num_threads()
}

/// Applies `f(row_index, row)` to each `row_len` chunk of `out`.
pub fn for_each_row<T, F>(out: &mut [T], row_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    if row_len == 0 || out.is_empty() {
        return;
    }
    if out.len() >= MIN_PAR_ELEMENTS && num_threads() > 1 {
        pool().install(|| {
            out.par_chunks_mut(row_len)
                .enumerate()
                .for_each(|(i, row)| f(i, row));
        });
    } else {
        for (i, row) in out.chunks_mut(row_len).enumerate() {
            f(i, row);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_visit_every_index() {
        let mut out = vec![0usize; 40];
        for_each_row(&mut out, 8, |i, row| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = i * 100 + j;
            }
        });
        assert_eq!(out[0], 0);
        assert_eq!(out[9], 101);
        assert_eq!(out[39], 407);
    }
}
