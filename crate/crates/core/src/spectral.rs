//! Dirichlet sine-basis machinery on [0,1]: basis evaluation, Laplacian
//! eigenvalues, transforms between coefficients and a collocation grid,
//! Galerkin projection, pseudo-spectral nonlinear products with dealiasing,
//! and Q-Wiener increments.

use std::f64::consts::PI;

use crate::rng::RngPlan;
use crate::state::SpectralField;
use crate::{Error, Result};

/// e_k(x) = sqrt(2) sin(k pi x), orthonormal in L^2(0,1).
pub fn basis_eval(k: usize, x: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::ModesOneIndexed);
    }
    Ok(std::f64::consts::SQRT_2 * (k as f64 * PI * x).sin())
}

/// Eigenvalue of -Laplacian with Dirichlet boundary: lambda_k = (k pi)^2.
pub fn laplacian_eigenvalue(k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::ModesOneIndexed);
    }
    Ok(laplacian_eigenvalue_unchecked(k))
}

pub(crate) fn laplacian_eigenvalue_unchecked(k: usize) -> f64 {
    let kpi = k as f64 * PI;
    kpi * kpi
}

/// Interior collocation nodes x_j = j/(M+1), j = 1..M, with the basis matrix
/// cached for O(nM) transforms. On these nodes {e_1..e_M} is exactly
/// orthonormal under the uniform quadrature weight 1/(M+1), so forward and
/// inverse transforms invert each other on band-limited data.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationGrid {
    n_points: usize,
    nodes: Vec<f64>,
    // basis[(k-1) * n_points + (j-1)] = e_k(x_j)
    basis: Vec<f64>,
}

impl CollocationGrid {
    pub fn new(n_points: usize) -> Self {
        assert!(n_points >= 2, "grid needs at least 2 interior points");
        let h = 1.0 / (n_points + 1) as f64;
        let nodes: Vec<f64> = (1..=n_points).map(|j| j as f64 * h).collect();
        let mut basis = vec![0.0; n_points * n_points];
        for k in 1..=n_points {
            for (j, &x) in nodes.iter().enumerate() {
                basis[(k - 1) * n_points + j] = std::f64::consts::SQRT_2 * (k as f64 * PI * x).sin();
            }
        }
        Self {
            n_points,
            nodes,
            basis,
        }
    }

    /// Default oversampled grid for a model with `n_modes` modes; large
    /// enough for cubic dealiasing.
    pub fn for_modes(n_modes: usize) -> Self {
        Self::new(3 * n_modes.max(1))
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn quadrature_weight(&self) -> f64 {
        1.0 / (self.n_points + 1) as f64
    }

    fn basis_row(&self, k: usize) -> &[f64] {
        &self.basis[(k - 1) * self.n_points..k * self.n_points]
    }

    /// Reconstruct grid values from sine coefficients.
    pub fn to_physical(&self, coeffs: &[f64]) -> Vec<f64> {
        assert!(
            coeffs.len() <= self.n_points,
            "more modes than grid points"
        );
        let mut values = vec![0.0; self.n_points];
        for (k, &a) in coeffs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (v, &b) in values.iter_mut().zip(self.basis_row(k + 1)) {
                *v += a * b;
            }
        }
        values
    }

    /// Leading sine coefficients of grid values under discrete quadrature.
    pub fn to_spectral(&self, values: &[f64], n_modes: usize) -> Vec<f64> {
        assert_eq!(values.len(), self.n_points);
        assert!(n_modes <= self.n_points, "more modes than grid points");
        let w = self.quadrature_weight();
        (1..=n_modes)
            .map(|k| {
                let row = self.basis_row(k);
                let dot: f64 = values.iter().zip(row).map(|(v, b)| v * b).sum();
                dot * w
            })
            .collect()
    }
}

/// Orthogonal projection pi_n: truncate coefficients beyond mode n.
/// Idempotent and norm-nonincreasing in both H and V.
pub fn project(field: &SpectralField, n: usize) -> SpectralField {
    let keep = n.min(field.n_modes());
    SpectralField::new(field.coeffs()[..keep].to_vec())
}

/// Named pointwise nonlinearities for [`nonlinear_product`].
#[derive(Clone, Copy)]
pub enum PointwiseOp {
    /// (mu(x .^2)(x)) u(x): the empirical mean-square field times the state.
    CubeWithMeanSquare,
    /// d/dx ( u(x) . mean_j phi(X_j(x)) ) with phi = tanh.
    TransportPhi,
}

fn require_grid(n_points: usize, required: usize) -> Result<()> {
    if n_points < required {
        return Err(Error::DealiasingViolated { n_points, required });
    }
    Ok(())
}

/// Pointwise empirical mean-square field (1/N) sum_j X_j(x)^2 on the grid,
/// reduced in canonical order per node.
pub fn mean_square_grid(grid: &CollocationGrid, fields: &[&[f64]]) -> Vec<f64> {
    assert!(!fields.is_empty());
    let samples: Vec<Vec<f64>> = fields.iter().map(|f| grid.to_physical(f)).collect();
    (0..grid.n_points())
        .map(|j| crate::reduce::canonical_mean(samples.iter().map(|s| s[j] * s[j]).collect()))
        .collect()
}

/// Pointwise empirical mean of phi composed with the fields on the grid.
pub fn mean_phi_grid<F: Fn(f64) -> f64>(
    grid: &CollocationGrid,
    fields: &[&[f64]],
    phi: F,
) -> Vec<f64> {
    assert!(!fields.is_empty());
    let samples: Vec<Vec<f64>> = fields.iter().map(|f| grid.to_physical(f)).collect();
    (0..grid.n_points())
        .map(|j| crate::reduce::canonical_mean(samples.iter().map(|s| phi(s[j])).collect()))
        .collect()
}

/// Galerkin coefficients of w(x) u(x) for a grid field w (cubic dealiasing:
/// the grid must have at least 2 * n_out points).
pub fn multiply_and_project(
    grid: &CollocationGrid,
    u_coeffs: &[f64],
    w_grid: &[f64],
    n_out: usize,
) -> Result<Vec<f64>> {
    require_grid(grid.n_points(), 2 * n_out)?;
    let u_vals = grid.to_physical(u_coeffs);
    let prod: Vec<f64> = u_vals.iter().zip(w_grid).map(|(u, w)| u * w).collect();
    Ok(grid.to_spectral(&prod, n_out))
}

/// Sine-mode projection of the x-derivative of a sine series: the derivative
/// of sum p_k e_k is a cosine series with coefficients k pi p_k, and
/// <sqrt2 cos(k pi x), sqrt2 sin(l pi x)> = 4l / (pi (l^2 - k^2)) for k+l odd,
/// zero otherwise. The resulting map is exactly skew-symmetric.
pub fn derivative_projection(p_coeffs: &[f64], n_out: usize) -> Vec<f64> {
    let m = p_coeffs.len();
    (1..=n_out)
        .map(|l| {
            let mut acc = 0.0;
            // k + l odd, so k steps by 2 from the right parity.
            let start = if l % 2 == 0 { 1 } else { 2 };
            let lf = l as f64;
            let mut k = start;
            while k <= m {
                let kf = k as f64;
                acc += p_coeffs[k - 1] * 4.0 * kf * lf / (lf * lf - kf * kf);
                k += 2;
            }
            acc
        })
        .collect()
}

/// Galerkin coefficients of d/dx (u(x) w(x)) for a grid field w (transport
/// dealiasing: at least ceil(3 n_out / 2) grid points).
pub fn transport_and_project(
    grid: &CollocationGrid,
    u_coeffs: &[f64],
    w_grid: &[f64],
    n_out: usize,
) -> Result<Vec<f64>> {
    require_grid(grid.n_points(), (3 * n_out).div_ceil(2))?;
    let u_vals = grid.to_physical(u_coeffs);
    let prod: Vec<f64> = u_vals.iter().zip(w_grid).map(|(u, w)| u * w).collect();
    let p = grid.to_spectral(&prod, grid.n_points());
    Ok(derivative_projection(&p, n_out))
}

/// Pointwise nonlinearity of a state against an empirical measure, projected
/// back onto the state's modes.
pub fn nonlinear_product(
    u: &SpectralField,
    measure_fields: &[&[f64]],
    op: PointwiseOp,
    grid: &CollocationGrid,
) -> Result<SpectralField> {
    let n_out = u.n_modes();
    let coeffs = match op {
        PointwiseOp::CubeWithMeanSquare => {
            let w = mean_square_grid(grid, measure_fields);
            multiply_and_project(grid, u.coeffs(), &w, n_out)?
        }
        PointwiseOp::TransportPhi => {
            let w = mean_phi_grid(grid, measure_fields, f64::tanh);
            transport_and_project(grid, u.coeffs(), &w, n_out)?
        }
    };
    Ok(SpectralField::new(coeffs))
}

/// One Q-Wiener increment: (sqrt(q_k dt) xi_k)_k with q_k = k^(-2s) and
/// i.i.d. standard normal xi_k drawn from the particle's counter stream.
pub fn qwiener_increment(
    plan: &RngPlan,
    particle: u64,
    step: u64,
    dt: f64,
    n_modes: usize,
    decay_s: f64,
) -> Vec<f64> {
    assert!(dt >= 0.0, "dt must be nonnegative");
    if dt == 0.0 {
        return vec![0.0; n_modes];
    }
    (1..=n_modes)
        .map(|k| {
            let q_k = (k as f64).powf(-2.0 * decay_s);
            (q_k * dt).sqrt() * plan.normal(particle, step, (k - 1) as u32)
        })
        .collect()
}
