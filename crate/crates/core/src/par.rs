//! Data-parallel helpers with a sequential fallback.
//!
//! Every reduction splits its index range into fixed [`CHUNK`]-sized blocks,
//! folds each block left to right, then combines block results pairwise in
//! index order. The combination tree depends only on the range length, so
//! sums are bit-identical whether blocks run on rayon or sequentially.

use std::ops::Range;

/// Rows per reduction block.
pub const CHUNK: usize = 2048;

fn chunk_ranges(len: usize) -> Vec<Range<usize>> {
    (0..len.div_ceil(CHUNK))
        .map(|c| c * CHUNK..((c + 1) * CHUNK).min(len))
        .collect()
}

fn combine_pairwise<A>(mut parts: Vec<A>, combine: &impl Fn(A, A) -> A) -> Option<A> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(combine(a, b)),
                None => next.push(a),
            }
        }
        parts = next;
    }
    parts.pop()
}

/// Folds `0..len` block by block and combines block accumulators pairwise.
pub fn fold_chunks<A, I, F, C>(len: usize, init: I, fold: F, combine: C) -> A
where
    A: Send,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, Range<usize>) + Sync,
    C: Fn(A, A) -> A,
{
    let ranges = chunk_ranges(len);
    let run = |r: &Range<usize>| {
        let mut acc = init();
        fold(&mut acc, r.clone());
        acc
    };
    #[cfg(feature = "parallel")]
    let parts: Vec<A> = {
        use rayon::prelude::*;
        ranges.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<A> = ranges.iter().map(run).collect();
    combine_pairwise(parts, &combine).unwrap_or_else(init)
}

/// Deterministic sum of a slice.
pub fn sum(values: &[f64]) -> f64 {
    fold_chunks(
        values.len(),
        || 0.0,
        |acc, r| {
            for v in &values[r] {
                *acc += v;
            }
        },
        |a, b| a + b,
    )
}

/// Elementwise sum of fixed-length accumulators.
pub fn add_vecs(mut a: Vec<f64>, b: Vec<f64>) -> Vec<f64> {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
    a
}

/// `out[i] = f(i)` for every index.
pub fn fill<F>(out: &mut [f64], f: F)
where
    F: Fn(usize) -> f64 + Sync,
{
    fill_with(out, || (), |_, i| f(i));
}

/// Like [`fill`], with a scratch value created once per block.
pub fn fill_with<S, I, F>(out: &mut [f64], init: I, f: F)
where
    I: Fn() -> S + Sync,
    F: Fn(&mut S, usize) -> f64 + Sync,
{
    let block = |c: usize, block: &mut [f64]| {
        let mut scratch = init();
        for (k, v) in block.iter_mut().enumerate() {
            *v = f(&mut scratch, c * CHUNK + k);
        }
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        out.par_chunks_mut(CHUNK)
            .enumerate()
            .for_each(|(c, b)| block(c, b));
    }
    #[cfg(not(feature = "parallel"))]
    for (c, b) in out.chunks_mut(CHUNK).enumerate() {
        block(c, b);
    }
}

/// Maps `0..len` to a vector, preserving index order.
pub fn map_indexed<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..len).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..len).map(f).collect()
    }
}

/// Sizes the global worker pool. A no-op without the `parallel` feature.
pub fn init_threads(threads: usize) -> Result<(), String> {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| e.to_string())
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        Ok(())
    }
}

/// Number of workers the helpers above will use.
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
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
    fn sum_matches_naive_on_exact_values() {
        let v: Vec<f64> = (0..10_000).map(|i| i as f64).collect();
        assert_eq!(sum(&v), 49_995_000.0);
        assert_eq!(sum(&[]), 0.0);
    }

    #[test]
    fn combination_order_is_fixed() {
        // Values that are sensitive to association order.
        let v: Vec<f64> = (0..9_000).map(|i| 1.0 / (1.0 + i as f64).powi(3) * 1e16).collect();
        let a = sum(&v);
        let b = sum(&v);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn fill_and_map_preserve_order() {
        let mut out = vec![0.0; 5000];
        fill(&mut out, |i| i as f64 * 2.0);
        assert!(out.iter().enumerate().all(|(i, v)| *v == i as f64 * 2.0));
        let m = map_indexed(5000, |i| i);
        assert_eq!(m, (0..5000).collect::<Vec<_>>());
    }
}
