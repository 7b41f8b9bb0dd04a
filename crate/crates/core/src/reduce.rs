//! Canonical floating-point reductions.
//!
//! Empirical-measure functionals must be bit-reproducible under particle
//! permutation and thread-count changes, and sign-symmetric reductions must
//! commute with negating every sample. Both follow from one rule: sort the
//! term list by `(|t|, t)` and fold it with a fixed pairwise tree. Sorting
//! makes the result a function of the term multiset alone; the tree keeps
//! rounding error at the usual pairwise O(log n) level.

/// Pairwise tree fold with a small sequential base case.
fn pairwise(terms: &[f64]) -> f64 {
    if terms.len() <= 8 {
        return terms.iter().sum();
    }
    let mid = terms.len() / 2;
    pairwise(&terms[..mid]) + pairwise(&terms[mid..])
}

fn canonical_key(a: &f64, b: &f64) -> std::cmp::Ordering {
    a.abs().total_cmp(&b.abs()).then(a.total_cmp(b))
}

/// Sum of `terms` in the canonical order. Consumes the buffer since it sorts
/// in place.
pub fn canonical_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_unstable_by(canonical_key);
    pairwise(&terms)
}

/// Mean of `terms` in the canonical order.
pub fn canonical_mean(terms: Vec<f64>) -> f64 {
    let n = terms.len();
    assert!(n > 0, "mean of empty term list");
    canonical_sum(terms) / n as f64
}
