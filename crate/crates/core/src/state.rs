//! Domain types: particle ensembles, spectral fields, empirical snapshots,
//! and recorded paths.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;
use std::sync::OnceLock;

use crate::reduce::{canonical_mean, canonical_sum};
use crate::spectral;
use crate::{Error, Result};

/// Coordinate interpretation of a state vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateKind {
    /// Point in R^d with the Euclidean norm.
    Euclidean,
    /// Coefficients in the Dirichlet sine basis on [0,1].
    SpectralSine,
}

impl StateKind {
    pub fn name(&self) -> &'static str {
        match self {
            StateKind::Euclidean => "Euclidean",
            StateKind::SpectralSine => "SpectralSine",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "Euclidean" => Ok(StateKind::Euclidean),
            "SpectralSine" => Ok(StateKind::SpectralSine),
            other => Err(Error::Config(format!("unknown state kind {other:?}"))),
        }
    }
}

/// The carrier of the interacting system: N state vectors stored row-major
/// (particle-major), since per-particle drift evaluation is the hot loop.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    kind: StateKind,
    n_particles: usize,
    state_dim: usize,
    states: Vec<f64>,
}

impl ParticleEnsemble {
    pub fn zeros(kind: StateKind, n_particles: usize, state_dim: usize) -> Self {
        assert!(n_particles >= 1, "n_particles must be >= 1");
        assert!(state_dim >= 1, "state_dim must be >= 1");
        Self {
            kind,
            n_particles,
            state_dim,
            states: vec![0.0; n_particles * state_dim],
        }
    }

    pub fn from_rows(kind: StateKind, rows: &[Vec<f64>]) -> Self {
        assert!(!rows.is_empty(), "n_particles must be >= 1");
        let dim = rows[0].len();
        assert!(dim >= 1, "state_dim must be >= 1");
        let mut states = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            assert_eq!(r.len(), dim, "ragged rows");
            states.extend_from_slice(r);
        }
        Self {
            kind,
            n_particles: rows.len(),
            state_dim: dim,
            states,
        }
    }

    /// 1-D Euclidean ensemble from scalar samples.
    pub fn from_scalars(values: &[f64]) -> Self {
        assert!(!values.is_empty(), "n_particles must be >= 1");
        Self {
            kind: StateKind::Euclidean,
            n_particles: values.len(),
            state_dim: 1,
            states: values.to_vec(),
        }
    }

    pub fn kind(&self) -> StateKind {
        self.kind
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.states[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.states[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn states_mut(&mut self) -> &mut [f64] {
        &mut self.states
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.state_dim)
    }

    /// Every accepted integrator step must leave only finite coefficients.
    pub fn check_finite(&self) -> bool {
        self.states.iter().all(|x| x.is_finite())
    }

    /// Write as CSV: one row per particle, columns = coefficients.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# kind={} dim={}", self.kind.name(), self.state_dim)?;
        for row in self.rows() {
            let line: Vec<String> = row.iter().map(|x| format!("{x}")).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn write_csv_path(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(BufWriter::new(file))
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut kind = None;
        let mut dim = None;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for line in r.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                for tok in rest.split_whitespace() {
                    if let Some(v) = tok.strip_prefix("kind=") {
                        kind = Some(StateKind::parse(v)?);
                    } else if let Some(v) = tok.strip_prefix("dim=") {
                        dim = Some(v.parse::<usize>().map_err(|_| {
                            Error::Config(format!("bad dim in CSV header: {v:?}"))
                        })?);
                    }
                }
                continue;
            }
            let row: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|t| t.trim().parse::<f64>()).collect();
            rows.push(row.map_err(|e| Error::Config(format!("bad CSV row: {e}")))?);
        }
        let kind = kind.ok_or_else(|| Error::Config("missing kind= in CSV header".into()))?;
        let dim = dim.ok_or_else(|| Error::Config("missing dim= in CSV header".into()))?;
        if rows.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        for row in &rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
        }
        let mut ens = Self::from_rows(kind, &rows);
        ens.kind = kind;
        Ok(ens)
    }

    pub fn read_csv_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

/// Coefficient vector in the Dirichlet sine basis e_k(x) = sqrt(2) sin(k pi x)
/// on [0,1], identified with an element of H = L^2 (and of V = W_0^{1,2} via
/// the gradient norm).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    coeffs: Vec<f64>,
}

impl SpectralField {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn zeros(n_modes: usize) -> Self {
        Self {
            coeffs: vec![0.0; n_modes],
        }
    }

    pub fn n_modes(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    /// Parseval: ||u||_H^2 = sum_k a_k^2.
    pub fn h_norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|a| a * a).sum()
    }

    pub fn h_norm(&self) -> f64 {
        self.h_norm_sq().sqrt()
    }

    /// ||u||_V^2 = sum_k (k pi)^2 a_k^2, the squared gradient norm.
    pub fn v_norm_sq(&self) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, a)| spectral::laplacian_eigenvalue_unchecked(i + 1) * a * a)
            .sum()
    }

    pub fn v_norm(&self) -> f64 {
        self.v_norm_sq().sqrt()
    }
}

/// Euclidean norm of a raw coefficient row; equals the H-norm for both state
/// kinds.
pub fn h_norm_of(row: &[f64]) -> f64 {
    row.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// V-norm of a raw coefficient row for the given kind. Finite-dimensional
/// models use V = H = R^d.
pub fn v_norm_of(kind: StateKind, row: &[f64]) -> f64 {
    match kind {
        StateKind::Euclidean => h_norm_of(row),
        StateKind::SpectralSine => row
            .iter()
            .enumerate()
            .map(|(i, a)| spectral::laplacian_eigenvalue_unchecked(i + 1) * a * a)
            .sum::<f64>()
            .sqrt(),
    }
}

/// Read-only view of an ensemble at one instant; houses the empirical measure
/// S_t^N = (1/N) sum_j delta_{X_t^{N,j}} with uniform weights.
pub struct MeasureSnapshot<'a> {
    kind: StateKind,
    dim: usize,
    n: usize,
    states: &'a [f64],
    mean_cache: OnceLock<Vec<f64>>,
}

/// View the empirical measure of an ensemble without copying states.
pub fn empirical_snapshot(ensemble: &ParticleEnsemble) -> MeasureSnapshot<'_> {
    MeasureSnapshot {
        kind: ensemble.kind,
        dim: ensemble.state_dim,
        n: ensemble.n_particles,
        states: &ensemble.states,
        mean_cache: OnceLock::new(),
    }
}

impl<'a> MeasureSnapshot<'a> {
    /// Snapshot over a raw row-major state block (used by integrator stages).
    pub fn from_raw(kind: StateKind, dim: usize, states: &'a [f64]) -> Self {
        assert!(dim >= 1 && !states.is_empty() && states.len() % dim == 0);
        Self {
            kind,
            dim,
            n: states.len() / dim,
            states,
            mean_cache: OnceLock::new(),
        }
    }

    pub fn kind(&self) -> StateKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_samples(&self) -> usize {
        self.n
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn samples(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.dim)
    }

    /// Canonical-order reduction of a per-sample functional.
    pub fn reduce<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        canonical_sum(self.samples().map(f).collect())
    }

    /// p-th moment of the H-norm: mu(||.||^p) = (1/N) sum_i ||x_i||^p.
    pub fn moment(&self, p: f64) -> f64 {
        self.reduce(|row| {
            let r = h_norm_of(row);
            if p == 2.0 {
                r * r
            } else if p == 1.0 {
                r
            } else {
                r.powf(p)
            }
        }) / self.n as f64
    }

    /// Componentwise empirical mean, cached.
    pub fn mean_vector(&self) -> &[f64] {
        self.mean_cache.get_or_init(|| {
            (0..self.dim)
                .map(|c| canonical_mean(self.samples().map(|row| row[c]).collect()))
                .collect()
        })
    }
}

/// Time-indexed trajectory of one particle with cached H-norms and the
/// left-endpoint quadrature of int_0^t ||xi_s||_V^alpha ds; the inputs of the
/// stopping time tau_R.
#[derive(Debug, Clone)]
pub struct PathRecord {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub h_norms: Vec<f64>,
    pub v_alpha_cumsum: Vec<f64>,
    pub alpha: f64,
}

impl PathRecord {
    pub fn new(alpha: f64) -> Self {
        assert!(alpha > 1.0, "alpha must exceed 1");
        Self {
            times: Vec::new(),
            states: Vec::new(),
            h_norms: Vec::new(),
            v_alpha_cumsum: Vec::new(),
            alpha,
        }
    }

    /// Append one sample. `v_alpha_integral` is the cumulative left-endpoint
    /// integral of ||xi||_V^alpha up to `t` on the integrator grid.
    pub fn push(&mut self, t: f64, state: Vec<f64>, v_alpha_integral: f64) {
        if let Some(last) = self.times.last() {
            assert!(t > *last, "times must increase");
        }
        if let Some(last) = self.v_alpha_cumsum.last() {
            assert!(
                v_alpha_integral >= *last,
                "v_alpha_cumsum must be nondecreasing"
            );
        }
        self.h_norms.push(h_norm_of(&state));
        self.states.push(state);
        self.times.push(t);
        self.v_alpha_cumsum.push(v_alpha_integral);
    }

    /// Build a path from states on a uniform grid, computing the norm caches
    /// with the left-endpoint rule.
    pub fn from_states(kind: StateKind, times: Vec<f64>, states: Vec<Vec<f64>>, alpha: f64) -> Self {
        assert_eq!(times.len(), states.len());
        let mut path = Self::new(alpha);
        let mut integral = 0.0;
        for j in 0..times.len() {
            if j > 0 {
                let dt = times[j] - times[j - 1];
                integral += v_norm_of(kind, &states[j - 1]).powf(alpha) * dt;
            }
            path.push(times[j], states[j].clone(), integral);
        }
        path
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn end_time(&self) -> Option<f64> {
        self.times.last().copied()
    }
}

/// First grid time at which ||xi_t||_H + int_0^t ||xi_s||_V^alpha ds >= R,
/// capped at the final time. Resolved to grid times only.
pub fn tau_r(path: &PathRecord, r: f64) -> Result<f64> {
    if path.is_empty() {
        return Err(Error::EmptyPath);
    }
    assert!(r > 0.0, "R must be positive");
    for j in 0..path.len() {
        if path.h_norms[j] + path.v_alpha_cumsum[j] >= r {
            return Ok(path.times[j]);
        }
    }
    Ok(*path.times.last().expect("nonempty"))
}
