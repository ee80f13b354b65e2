//! Deterministic parallel map-reduce: work splits into fixed-size index
//! chunks regardless of thread count, and partial results combine in chunk
//! order, so floating-point reductions are bitwise reproducible.

use rayon::prelude::*;
use std::ops::Range;

pub fn chunk_ranges(n: usize, chunk: usize) -> Vec<Range<usize>> {
    assert!(chunk > 0);
    (0..n)
        .step_by(chunk)
        .map(|s| s..(s + chunk).min(n))
        .collect()
}

/// Applies `f` to each fixed chunk of `0..n` in parallel, returning partials
/// in chunk order.
pub fn map_chunks<P, F>(n: usize, chunk: usize, f: F) -> Vec<P>
where
    P: Send,
    F: Fn(Range<usize>) -> P + Sync + Send,
{
    chunk_ranges(n, chunk).into_par_iter().map(f).collect()
}

/// Sums per-chunk gradient partials into `acc` in chunk order.
pub fn fold_grads(acc: &mut [f64], partials: &[Vec<f64>]) {
    for partial in partials {
        debug_assert_eq!(partial.len(), acc.len());
        for (a, p) in acc.iter_mut().zip(partial.iter()) {
            *a += p;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_range_exactly() {
        let ranges = chunk_ranges(10, 3);
        assert_eq!(ranges, vec![0..3, 3..6, 6..9, 9..10]);
    }

    #[test]
    fn map_chunks_is_ordered_and_deterministic() {
        let partials = map_chunks(1000, 7, |r| r.map(|i| i as f64).sum::<f64>());
        let total: f64 = partials.iter().sum();
        assert_eq!(total, 499_500.0);
        let again = map_chunks(1000, 7, |r| r.map(|i| i as f64).sum::<f64>());
        assert_eq!(partials, again);
    }
}
