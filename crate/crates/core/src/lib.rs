//! Simulation library for weakly interacting particle systems and field
//! systems with polynomial-growth kernels, their spectral Galerkin
//! discretizations, and their mean-field limits.
//!
//! The crate is organized around a small set of domain types
//! ([`state::ParticleEnsemble`], [`state::SpectralField`],
//! [`state::MeasureSnapshot`], [`state::PathRecord`]) and a catalogue of
//! drift/diffusion models ([`models::ModelSpec`]) that are integrated in time
//! by [`integrate`]. Empirical-measure functionals and Wasserstein distances
//! live in [`measure`], independent analytic references in [`oracles`], and
//! the experiment runner in [`cli`].

pub mod cli;
pub mod integrate;
pub mod measure;
pub mod models;
pub mod oracles;
pub mod reduce;
pub mod rng;
pub mod spectral;
pub mod state;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty path")]
    EmptyPath,

    #[error("empty measure")]
    EmptyMeasure,

    #[error("modes are 1-indexed")]
    ModesOneIndexed,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("state kind mismatch: expected {expected}, got {got}")]
    KindMismatch { expected: &'static str, got: &'static str },

    #[error("resampling required: sample sizes differ ({a} vs {b})")]
    SizeMismatch { a: usize, b: usize },

    #[error("sample set too large for exact assignment ({n} > {max_n}); use the sliced estimator")]
    AssignmentTooLarge { n: usize, max_n: usize },

    #[error("dealiasing violated: grid has {n_points} points, need at least {required}")]
    DealiasingViolated { n_points: usize, required: usize },

    #[error("time grid mismatch between paths")]
    GridMismatch,

    #[error("blow-up detected at t={t}: {detail}")]
    BlowUp { t: f64, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
