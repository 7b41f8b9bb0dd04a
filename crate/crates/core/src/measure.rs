//! Empirical-measure functionals and distances: means, variances, exact 1-D
//! Wasserstein, small-N assignment-based Wasserstein, the sliced surrogate
//! for vector states, and the stopped path distance behind W_{2,R}.

use crate::reduce::{canonical_mean, canonical_sum};
use crate::rng::RngPlan;
use crate::state::{tau_r, MeasureSnapshot, ParticleEnsemble, PathRecord};
use crate::{Error, Result};

/// Empirical mean m[mu] (componentwise for vector states).
pub fn mean_of(mu: &MeasureSnapshot<'_>) -> Vec<f64> {
    mu.mean_vector().to_vec()
}

/// Scalar empirical mean; errors unless d = 1.
pub fn mean_scalar(mu: &MeasureSnapshot<'_>) -> Result<f64> {
    if mu.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: mu.dim(),
        });
    }
    Ok(mu.mean_vector()[0])
}

/// Population variance Var[mu] = (1/N) sum_j (x_j - mean)^2 for d = 1.
pub fn variance_of(mu: &MeasureSnapshot<'_>) -> Result<f64> {
    let m = mean_scalar(mu)?;
    let terms: Vec<f64> = mu
        .samples()
        .map(|row| {
            let d = row[0] - m;
            d * d
        })
        .collect();
    Ok(canonical_mean(terms))
}

/// Exact W_p between equal-size uniform empirical measures on R via order
/// statistics, p in {1, 2}.
pub fn wp_sorted_1d(a: &[f64], b: &[f64], p: f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    if a.len() != b.len() {
        return Err(Error::SizeMismatch {
            a: a.len(),
            b: b.len(),
        });
    }
    assert!(p == 1.0 || p == 2.0, "sorted formula implemented for p in {{1, 2}}");
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_unstable_by(f64::total_cmp);
    sb.sort_unstable_by(f64::total_cmp);
    let terms: Vec<f64> = sa
        .iter()
        .zip(&sb)
        .map(|(x, y)| {
            let d = (x - y).abs();
            if p == 2.0 {
                d * d
            } else {
                d
            }
        })
        .collect();
    let mean = canonical_mean(terms);
    Ok(if p == 2.0 { mean.sqrt() } else { mean })
}

/// Exact 1-D W_2 via the sorted coupling.
pub fn w2_sorted_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    wp_sorted_1d(a, b, 2.0)
}

pub const ASSIGNMENT_MAX_N: usize = 12;

/// Exact W_2 between equal-size uniform empirical measures on R^d (or on
/// coefficient space with the H-norm) by optimal assignment over subsets.
/// Cost is O(N 2^N), so N is capped at `max_n`.
pub fn w2_assignment(a: &ParticleEnsemble, b: &ParticleEnsemble, max_n: usize) -> Result<f64> {
    if a.state_dim() != b.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: a.state_dim(),
            got: b.state_dim(),
        });
    }
    if a.n_particles() != b.n_particles() {
        return Err(Error::SizeMismatch {
            a: a.n_particles(),
            b: b.n_particles(),
        });
    }
    let n = a.n_particles();
    if n > max_n {
        return Err(Error::AssignmentTooLarge { n, max_n });
    }
    let cost = |i: usize, j: usize| -> f64 {
        a.row(i)
            .iter()
            .zip(b.row(j))
            .map(|(x, y)| (x - y) * (x - y))
            .sum()
    };
    // dp[mask] = minimal cost of assigning rows 0..popcount(mask) of `a`
    // to the columns of `b` selected by `mask`.
    let full = 1usize << n;
    let mut dp = vec![f64::INFINITY; full];
    dp[0] = 0.0;
    for mask in 1..full {
        let i = (mask as u32).count_ones() as usize - 1;
        let mut best = f64::INFINITY;
        let mut rest = mask;
        while rest != 0 {
            let j = rest.trailing_zeros() as usize;
            rest &= rest - 1;
            let c = dp[mask ^ (1 << j)] + cost(i, j);
            if c < best {
                best = c;
            }
        }
        dp[mask] = best;
    }
    Ok((dp[full - 1] / n as f64).sqrt())
}

/// Sliced W_2 estimate with its direction-sampling standard error.
#[derive(Debug, Clone, Copy)]
pub struct SlicedW2 {
    pub value: f64,
    pub std_error: f64,
    pub n_directions: usize,
}

/// Root-mean over random unit directions of the squared 1-D W_2 of the
/// projected samples. A distance-like diagnostic, not the exact W_2 on H.
pub fn sliced_w2(
    a: &ParticleEnsemble,
    b: &ParticleEnsemble,
    n_directions: usize,
    plan: &RngPlan,
) -> Result<SlicedW2> {
    if a.state_dim() != b.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: a.state_dim(),
            got: b.state_dim(),
        });
    }
    if a.n_particles() != b.n_particles() {
        return Err(Error::SizeMismatch {
            a: a.n_particles(),
            b: b.n_particles(),
        });
    }
    assert!(n_directions >= 1);
    let d = a.state_dim();
    let mut sq = Vec::with_capacity(n_directions);
    for dir_idx in 0..n_directions {
        // Isotropic direction from normalized Gaussian draws.
        let mut theta: Vec<f64> = (0..d)
            .map(|c| plan.normal(dir_idx as u64, 0, c as u32))
            .collect();
        let norm = theta.iter().map(|t| t * t).sum::<f64>().sqrt();
        if norm == 0.0 {
            theta[0] = 1.0;
        } else {
            theta.iter_mut().for_each(|t| *t /= norm);
        }
        let proj = |ens: &ParticleEnsemble| -> Vec<f64> {
            ens.rows()
                .map(|row| row.iter().zip(&theta).map(|(x, t)| x * t).sum())
                .collect()
        };
        let w = w2_sorted_1d(&proj(a), &proj(b))?;
        sq.push(w * w);
    }
    let mean_sq = canonical_mean(sq.clone());
    let value = mean_sq.sqrt();
    let std_error = if n_directions > 1 && value > 0.0 {
        let var = canonical_sum(sq.iter().map(|s| (s - mean_sq) * (s - mean_sq)).collect())
            / (n_directions - 1) as f64;
        // Delta method for the square root of the mean.
        (var / n_directions as f64).sqrt() / (2.0 * value)
    } else {
        0.0
    };
    Ok(SlicedW2 {
        value,
        std_error,
        n_directions,
    })
}

/// Per-pair functional behind the W_{2,R} upper bound: stop both paths at
/// tau = tau_R(a) /\ tau_R(b) and take the sup of the H-distance over grid
/// times up to tau. Averaging its square over coupled pairs bounds W_{2,R}^2.
pub fn stopped_sup_distance(pa: &PathRecord, pb: &PathRecord, r: f64) -> Result<f64> {
    if pa.times.len() != pb.times.len()
        || pa
            .times
            .iter()
            .zip(&pb.times)
            .any(|(s, t)| (s - t).abs() > 1e-12)
        || pa.alpha != pb.alpha
    {
        return Err(Error::GridMismatch);
    }
    let tau = tau_r(pa, r)?.min(tau_r(pb, r)?);
    let mut sup: f64 = 0.0;
    for j in 0..pa.times.len() {
        if pa.times[j] > tau {
            break;
        }
        let d: f64 = pa.states[j]
            .iter()
            .zip(&pb.states[j])
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        sup = sup.max(d);
    }
    Ok(sup)
}

/// Bootstrap resample (with replacement) to a common size; distances demand
/// equal sizes and never resample silently.
pub fn bootstrap_resample(
    samples: &ParticleEnsemble,
    target_n: usize,
    plan: &RngPlan,
) -> ParticleEnsemble {
    assert!(target_n >= 1);
    let n = samples.n_particles();
    let rows: Vec<Vec<f64>> = (0..target_n)
        .map(|i| {
            let u = plan.uniform(i as u64, 0, 0);
            let idx = ((u * n as f64) as usize).min(n - 1);
            samples.row(idx).to_vec()
        })
        .collect();
    ParticleEnsemble::from_rows(samples.kind(), &rows)
}
