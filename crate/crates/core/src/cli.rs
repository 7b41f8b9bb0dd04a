//! Experiment runner: TOML config parsing, the five experiment kinds
//! (simulate, sweep-n, sweep-galerkin, probe, wasserstein), CSV emission,
//! and reproducibility metadata.
//!
//! Every CSV starts with a comment header carrying the config hash and seed;
//! re-running with the same config reproduces byte-identical data sections
//! regardless of the thread count. `meta.txt` is the full config echo (valid
//! TOML, reparser-equivalent to the effective config) behind comment lines
//! with the seed and version.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::integrate::{
    run_interacting_opts, run_mean_field_reference, RunOptions, RunResult, Scheme, StepConfig,
};
use crate::measure;
use crate::models::{self, ModelSpec, SigmaSpec};
use crate::rng::{RngPlan, STEP_INIT};
use crate::state::{empirical_snapshot, ParticleEnsemble, StateKind};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BLOWUP: i32 = 3;
pub const EXIT_IO: i32 = 4;

// ---------------------------------------------------------------------------
// Config schema. Unknown keys are hard errors in every section.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub run: RunSection,
    pub model: ModelSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<TimeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub galerkin: Option<GalerkinSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    #[serde(default = "default_tracked")]
    pub tracked: usize,
    #[serde(default)]
    pub reference: bool,
}

fn default_tracked() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<u32>,
    /// Constant diffusion amplitude; 0 switches the noise off. Absent means
    /// the model default (sqrt(2) for variance_drift, 0 for svgd).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    /// Lipschitz diffusion [c1, c2, c3]: sigma(u, mu) = c1 + c2 clip(u) +
    /// c3 clip(mean). Overrides `sigma`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_lipschitz: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_modes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_decay: Option<f64>,
    /// Band limit for the Q-Wiener forcing; 0 switches the noise off.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_modes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSection {
    /// "gaussian", "constant" (Euclidean), or "coeffs" (spectral).
    pub kind: String,
    pub n_particles: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coeffs: Option<Vec<f64>>,
    /// Spectral gaussian amplitude decay: mode k gets std * k^(-mode_decay).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode_decay: Option<f64>,
    /// Rescale the sampled ensemble so the empirical second moment of the
    /// H-norm equals this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_m2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub dt: f64,
    pub t_end: f64,
    pub scheme: String,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
}

fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub n_values: Vec<usize>,
    pub replicas: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GalerkinSection {
    pub mode_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    /// "coercivity" or "monotonicity".
    pub kind: String,
    pub tuples: usize,
}

impl Config {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

// ---------------------------------------------------------------------------
// Builders from config sections.
// ---------------------------------------------------------------------------

fn sigma_of(section: &ModelSection, default: SigmaSpec) -> SigmaSpec {
    if let Some([c1, c2, c3]) = section.sigma_lipschitz {
        return SigmaSpec::Lipschitz { c1, c2, c3 };
    }
    match section.sigma {
        Some(c) if c == 0.0 => SigmaSpec::Zero,
        Some(c) => SigmaSpec::Constant(c),
        None => default,
    }
}

pub fn build_model(section: &ModelSection) -> Result<ModelSpec> {
    let decay = section.noise_decay.unwrap_or(1.5);
    let need_modes = || -> Result<usize> {
        section
            .n_modes
            .ok_or_else(|| Error::Config("missing key n_modes for a spectral model".into()))
    };
    match section.name.as_str() {
        "variance_drift" => ModelSpec::variance_drift(
            section.n.unwrap_or(1),
            sigma_of(section, SigmaSpec::Constant(2.0f64.sqrt())),
        ),
        "svgd" => ModelSpec::svgd(
            section.k.unwrap_or(1),
            section.m.unwrap_or(1),
            section.n.unwrap_or(1),
            sigma_of(section, SigmaSpec::Zero),
        ),
        "allen_cahn" => ModelSpec::allen_cahn(need_modes()?, decay, section.noise_modes),
        "burgers" => ModelSpec::burgers(need_modes()?, decay, section.noise_modes),
        "mean_coupled_heat" => ModelSpec::mean_coupled_heat(
            need_modes()?,
            section.kappa.unwrap_or(0.0),
            decay,
            section.noise_modes,
        ),
        other => Err(Error::Config(format!("unknown model name {other:?}"))),
    }
}

fn build_scheme(name: &str) -> Result<Scheme> {
    match name {
        "explicit_em" => Ok(Scheme::ExplicitEm),
        "semi_implicit_em" => Ok(Scheme::SemiImplicitEm),
        "rk4" => Ok(Scheme::Rk4),
        other => Err(Error::Config(format!("unknown scheme {other:?}"))),
    }
}

fn build_step_config(section: &TimeSection) -> Result<StepConfig> {
    Ok(StepConfig {
        dt: section.dt,
        scheme: build_scheme(&section.scheme)?,
        t_end: section.t_end,
        record_stride: section.record_stride,
    })
}

/// Sample an initial ensemble; per-particle draws come from the particle's
/// own stream under the reserved init step tag, so initial laws are
/// symmetric and permutation-consistent.
pub fn build_initial_ensemble(
    section: &InitSection,
    model: &ModelSpec,
    plan: &RngPlan,
    n_particles: usize,
) -> Result<ParticleEnsemble> {
    if n_particles == 0 {
        return Err(Error::Config("n_particles must be >= 1".into()));
    }
    let dim = model.state_dim();
    let rows: Vec<Vec<f64>> = match (section.kind.as_str(), model.state_kind()) {
        ("gaussian", StateKind::Euclidean) => {
            let mean = section.mean.unwrap_or(0.0);
            let std = section.std.unwrap_or(1.0);
            (0..n_particles)
                .map(|i| vec![mean + std * plan.normal(i as u64, STEP_INIT, 0)])
                .collect()
        }
        ("constant", StateKind::Euclidean) => {
            let value = section
                .value
                .ok_or_else(|| Error::Config("constant init needs key value".into()))?;
            (0..n_particles).map(|_| vec![value]).collect()
        }
        ("gaussian", StateKind::SpectralSine) => {
            let std = section.std.unwrap_or(1.0);
            let decay = section.mode_decay.unwrap_or(2.0);
            (0..n_particles)
                .map(|i| {
                    (0..dim)
                        .map(|k| {
                            std * ((k + 1) as f64).powf(-decay)
                                * plan.normal(i as u64, STEP_INIT, k as u32)
                        })
                        .collect()
                })
                .collect()
        }
        ("coeffs", StateKind::SpectralSine) => {
            let coeffs = section
                .coeffs
                .as_ref()
                .ok_or_else(|| Error::Config("coeffs init needs key coeffs".into()))?;
            if coeffs.len() > dim {
                return Err(Error::Config(format!(
                    "coeffs has {} entries but the model carries {} modes",
                    coeffs.len(),
                    dim
                )));
            }
            let mut row = coeffs.clone();
            row.resize(dim, 0.0);
            (0..n_particles).map(|_| row.clone()).collect()
        }
        (kind, _) => {
            return Err(Error::Config(format!(
                "init kind {kind:?} does not apply to a {} model",
                model.state_kind().name()
            )));
        }
    };
    let mut ens = ParticleEnsemble::from_rows(model.state_kind(), &rows);
    if let Some(target) = section.scale_m2 {
        let current = empirical_snapshot(&ens).moment(2.0);
        if current > 0.0 {
            let factor = (target / current).sqrt();
            ens.states_mut().iter_mut().for_each(|x| *x *= factor);
        }
    }
    Ok(ens)
}

// ---------------------------------------------------------------------------
// Output plumbing.
// ---------------------------------------------------------------------------

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

struct OutputContext {
    out_dir: PathBuf,
    config_hash: String,
    seed: u64,
    echo: String,
    threads: usize,
}

impl OutputContext {
    fn new(config: &Config, out_dir: &Path, threads: usize) -> Self {
        let echo = config.to_toml();
        Self {
            out_dir: out_dir.to_path_buf(),
            config_hash: format!("{:016x}", fnv1a64(echo.as_bytes())),
            seed: config.run.seed,
            echo,
            threads,
        }
    }

    fn header(&self) -> String {
        format!("# config_hash={} seed={}", self.config_hash, self.seed)
    }

    fn write_csv(&self, name: &str, columns: &[&str], rows: &[Vec<String>]) -> Result<()> {
        std::fs::create_dir_all(&self.out_dir)?;
        let mut text = String::new();
        let _ = writeln!(text, "{}", self.header());
        let _ = writeln!(text, "{}", columns.join(","));
        for row in rows {
            let _ = writeln!(text, "{}", row.join(","));
        }
        let mut file = std::fs::File::create(self.out_dir.join(name))?;
        file.write_all(text.as_bytes())?;
        Ok(())
    }

    fn write_meta(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out_dir)?;
        let mut text = String::new();
        let _ = writeln!(text, "# mfsim {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(text, "# config_hash={}", self.config_hash);
        let _ = writeln!(text, "# seed={}", self.seed);
        let _ = writeln!(text, "# threads={}", self.threads);
        text.push_str(&self.echo);
        let mut file = std::fs::File::create(self.out_dir.join("meta.txt"))?;
        file.write_all(text.as_bytes())?;
        Ok(())
    }
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

// ---------------------------------------------------------------------------
// Experiment drivers.
// ---------------------------------------------------------------------------

fn require<'a, T>(section: &'a Option<T>, name: &str) -> Result<&'a T> {
    section
        .as_ref()
        .ok_or_else(|| Error::Config(format!("missing [{name}] section")))
}

pub fn cmd_simulate(config: &Config, out_dir: &Path, threads: usize) -> Result<()> {
    let model = build_model(&config.model)?;
    let init = require(&config.init, "init")?;
    let time = require(&config.time, "time")?;
    let step_cfg = build_step_config(time)?;
    step_cfg.validate(&model)?;
    let plan = RngPlan::new(config.run.seed);
    let ens0 = build_initial_ensemble(init, &model, &plan, init.n_particles)?;

    let opts = RunOptions {
        tracked: config.run.tracked,
        ..RunOptions::default()
    };
    let result = if config.run.reference {
        run_mean_field_reference(&model, &ens0, &step_cfg, &plan)?
    } else {
        run_interacting_opts(&model, &ens0, &step_cfg, &plan, &opts)?
    };

    let ctx = OutputContext::new(config, out_dir, threads);

    let tracked = result.paths.len();
    let mut columns: Vec<String> = vec!["t".into()];
    for p in 0..tracked {
        for c in 0..model.state_dim() {
            columns.push(format!("p{p}_c{c}"));
        }
    }
    let column_refs: Vec<&str> = columns.iter().map(|s| s.as_str()).collect();
    let n_records = result.diagnostics.len();
    let mut rows = Vec::with_capacity(n_records);
    for j in 0..n_records {
        let mut row = vec![fmt(result.diagnostics.times[j])];
        for path in &result.paths {
            row.extend(path.states[j].iter().map(|v| fmt(*v)));
        }
        rows.push(row);
    }
    ctx.write_csv("trajectory.csv", &column_refs, &rows)?;

    let d = &result.diagnostics;
    let rows: Vec<Vec<String>> = (0..n_records)
        .map(|j| {
            vec![
                fmt(d.times[j]),
                fmt(d.mean_first[j]),
                fmt(d.msq_first[j]),
                fmt(d.mean_h2[j]),
                fmt(d.sup_mean_h2[j]),
                fmt(d.int_v_alpha[j]),
            ]
        })
        .collect();
    ctx.write_csv(
        "diagnostics.csv",
        &["t", "m1", "m2", "mean_h2", "sup_mean_h2", "int_v_alpha"],
        &rows,
    )?;
    ctx.write_meta()?;
    Ok(())
}

const SALT_REFERENCE: u64 = 0x7265_6601;
const SALT_REPLICA: u64 = 0x7265_7001;
const SALT_RESAMPLE: u64 = 0x7265_7301;
const SALT_SLICED: u64 = 0x736c_6301;

pub const SLICED_DIRECTIONS: usize = 128;

/// Time-T distance of one replica's marginal from the reference marginal:
/// exact sorted W_2 in 1-D, first-coefficient marginal plus the sliced
/// diagnostic for spectral states. Sizes are matched by bootstrap-resampling
/// the reference when they differ.
fn replica_distance(
    replica: &ParticleEnsemble,
    reference: &ParticleEnsemble,
    plan: &RngPlan,
) -> Result<(f64, Option<f64>)> {
    let matched;
    let reference = if reference.n_particles() == replica.n_particles() {
        reference
    } else {
        matched = measure::bootstrap_resample(
            reference,
            replica.n_particles(),
            &plan.child(SALT_RESAMPLE),
        );
        &matched
    };
    let first = |ens: &ParticleEnsemble| -> Vec<f64> { ens.rows().map(|r| r[0]).collect() };
    let w2 = measure::w2_sorted_1d(&first(replica), &first(reference))?;
    let sliced = if replica.state_dim() > 1 {
        Some(
            measure::sliced_w2(
                replica,
                reference,
                SLICED_DIRECTIONS,
                &plan.child(SALT_SLICED),
            )?
            .value,
        )
    } else {
        None
    };
    Ok((w2, sliced))
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = crate::reduce::canonical_mean(values.to_vec());
    if n < 2 {
        return (mean, 0.0);
    }
    let var = crate::reduce::canonical_sum(
        values.iter().map(|v| (v - mean) * (v - mean)).collect(),
    ) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

pub struct SweepRow {
    pub n: usize,
    pub replicas: usize,
    pub mean_w2: f64,
    pub std_err: f64,
    pub mean_sliced: Option<f64>,
    pub sliced_std_err: Option<f64>,
}

/// Convergence sweep over particle counts against a large-N reference run.
pub fn run_sweep_n(config: &Config) -> Result<Vec<SweepRow>> {
    let model = build_model(&config.model)?;
    let init = require(&config.init, "init")?;
    let time = require(&config.time, "time")?;
    let sweep = require(&config.sweep, "sweep")?;
    if sweep.n_values.is_empty() {
        return Err(Error::Config("sweep.n_values must not be empty".into()));
    }
    if sweep.replicas == 0 {
        return Err(Error::Config("sweep.replicas must be >= 1".into()));
    }
    let step_cfg = build_step_config(time)?;
    step_cfg.validate(&model)?;
    let plan = RngPlan::new(config.run.seed);

    let default_ref = match model.state_kind() {
        StateKind::Euclidean => 100_000,
        StateKind::SpectralSine => 4096,
    };
    let n_ref = sweep.reference_n.unwrap_or(default_ref);
    let ref_plan = plan.child(SALT_REFERENCE);
    let ref_ens0 = build_initial_ensemble(init, &model, &ref_plan, n_ref)?;
    let reference = run_mean_field_reference(&model, &ref_ens0, &step_cfg, &ref_plan)?;

    let mut rows = Vec::new();
    for &n in &sweep.n_values {
        let results: Result<Vec<(f64, Option<f64>)>> = (0..sweep.replicas)
            .into_par_iter()
            .map(|r| -> Result<(f64, Option<f64>)> {
                let replica_plan = plan.child(SALT_REPLICA).child(n as u64).child(r as u64);
                let ens0 = build_initial_ensemble(init, &model, &replica_plan, n)?;
                let run = run_interacting_opts(
                    &model,
                    &ens0,
                    &step_cfg,
                    &replica_plan,
                    &RunOptions::default(),
                )?;
                replica_distance(run.final_marginal(), reference.final_marginal(), &replica_plan)
            })
            .collect();
        let results = results?;
        let w2s: Vec<f64> = results.iter().map(|(w, _)| *w).collect();
        let (mean_w2, std_err) = mean_and_stderr(&w2s);
        let (mean_sliced, sliced_std_err) = if results.iter().all(|(_, s)| s.is_some()) {
            let s: Vec<f64> = results.iter().map(|(_, s)| s.unwrap()).collect();
            let (m, e) = mean_and_stderr(&s);
            (Some(m), Some(e))
        } else {
            (None, None)
        };
        rows.push(SweepRow {
            n,
            replicas: sweep.replicas,
            mean_w2,
            std_err,
            mean_sliced,
            sliced_std_err,
        });
    }
    Ok(rows)
}

pub fn cmd_sweep_n(config: &Config, out_dir: &Path, threads: usize) -> Result<()> {
    let rows = run_sweep_n(config)?;
    let ctx = OutputContext::new(config, out_dir, threads);
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                r.replicas.to_string(),
                fmt(r.mean_w2),
                fmt(r.std_err),
                r.mean_sliced.map(fmt).unwrap_or_default(),
                r.sliced_std_err.map(fmt).unwrap_or_default(),
            ]
        })
        .collect();
    ctx.write_csv(
        "sweep_n.csv",
        &["n", "replicas", "mean_w2", "std_err", "mean_sliced_w2", "sliced_std_err"],
        &csv_rows,
    )?;
    ctx.write_meta()?;
    Ok(())
}

pub struct GalerkinRow {
    pub n_lo: usize,
    pub n_hi: usize,
    pub sup_h_diff: f64,
}

/// Shared-noise Galerkin refinement: run the same spectral model at each mode
/// count with identical per-mode noise, and report the sup-over-time ensemble
/// RMS H-distance between consecutive resolutions.
pub fn run_sweep_galerkin(config: &Config) -> Result<Vec<GalerkinRow>> {
    let galerkin = require(&config.galerkin, "galerkin")?;
    let init = require(&config.init, "init")?;
    let time = require(&config.time, "time")?;
    if galerkin.mode_counts.len() < 2 {
        return Err(Error::Config("galerkin.mode_counts needs at least two entries".into()));
    }
    if galerkin.mode_counts.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config("galerkin.mode_counts must be nondecreasing".into()));
    }
    let plan = RngPlan::new(config.run.seed);
    let step_cfg = build_step_config(time)?;

    let mut runs: Vec<(usize, RunResult)> = Vec::new();
    for &n_modes in &galerkin.mode_counts {
        let mut section = config.model.clone();
        section.n_modes = Some(n_modes);
        let model = build_model(&section)?;
        if model.state_kind() != StateKind::SpectralSine {
            return Err(Error::Config("sweep-galerkin applies to spectral models".into()));
        }
        step_cfg.validate(&model)?;
        let ens0 = build_initial_ensemble(init, &model, &plan, init.n_particles)?;
        let result = run_interacting_opts(
            &model,
            &ens0,
            &step_cfg,
            &plan,
            &RunOptions {
                keep_snapshots: true,
                ..RunOptions::default()
            },
        )?;
        runs.push((n_modes, result));
    }

    let mut rows = Vec::new();
    for pair in runs.windows(2) {
        let (n_lo, lo) = &pair[0];
        let (n_hi, hi) = &pair[1];
        let lo_snaps = lo.snapshots.as_ref().expect("snapshots kept");
        let hi_snaps = hi.snapshots.as_ref().expect("snapshots kept");
        let mut sup: f64 = 0.0;
        for (a, b) in lo_snaps.iter().zip(hi_snaps) {
            let msd = crate::reduce::canonical_mean(
                (0..a.n_particles())
                    .map(|i| {
                        let ra = a.row(i);
                        let rb = b.row(i);
                        let mut acc = 0.0;
                        for k in 0..rb.len() {
                            let lo_val = if k < ra.len() { ra[k] } else { 0.0 };
                            let d = rb[k] - lo_val;
                            acc += d * d;
                        }
                        acc
                    })
                    .collect(),
            );
            sup = sup.max(msd.sqrt());
        }
        rows.push(GalerkinRow {
            n_lo: *n_lo,
            n_hi: *n_hi,
            sup_h_diff: sup,
        });
    }
    Ok(rows)
}

pub fn cmd_sweep_galerkin(config: &Config, out_dir: &Path, threads: usize) -> Result<()> {
    let rows = run_sweep_galerkin(config)?;
    let ctx = OutputContext::new(config, out_dir, threads);
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.n_lo.to_string(), r.n_hi.to_string(), fmt(r.sup_h_diff)])
        .collect();
    ctx.write_csv("galerkin.csv", &["n_lo", "n_hi", "sup_h_diff"], &csv_rows)?;
    ctx.write_meta()?;
    Ok(())
}

pub struct ProbeSummary {
    pub kind: String,
    pub model: String,
    pub tuples: usize,
    pub passes: usize,
    pub worst_margin: f64,
    pub mean_margin: f64,
}

/// Random-tuple inequality report for the coercivity or local-monotonicity
/// probe of the configured model.
pub fn run_probe(config: &Config) -> Result<ProbeSummary> {
    let probe = require(&config.probe, "probe")?;
    let model = build_model(&config.model)?;
    let plan = RngPlan::new(config.run.seed);
    let mut passes = 0usize;
    let mut worst = f64::INFINITY;
    let mut margins = Vec::with_capacity(probe.tuples);
    for idx in 0..probe.tuples {
        let tuple = models::sample_probe_tuple(&model, &plan, idx as u64)?;
        let (satisfied, margin) = match probe.kind.as_str() {
            "coercivity" => {
                let rep = models::probe_coercivity(
                    &model,
                    &tuple.u,
                    &empirical_snapshot(&tuple.mu),
                )?;
                (rep.satisfied, rep.margin)
            }
            "monotonicity" => {
                let rep = models::probe_monotonicity(
                    &model,
                    &tuple.u,
                    &tuple.v,
                    &empirical_snapshot(&tuple.mu),
                    &empirical_snapshot(&tuple.nu),
                    tuple.w2_sq,
                )?;
                (rep.satisfied, rep.margin)
            }
            other => return Err(Error::Config(format!("unknown probe kind {other:?}"))),
        };
        if satisfied {
            passes += 1;
        }
        worst = worst.min(margin);
        margins.push(margin);
    }
    let mean_margin = if margins.is_empty() {
        0.0
    } else {
        crate::reduce::canonical_mean(margins)
    };
    Ok(ProbeSummary {
        kind: probe.kind.clone(),
        model: model.name().to_string(),
        tuples: probe.tuples,
        passes,
        worst_margin: if probe.tuples == 0 { 0.0 } else { worst },
        mean_margin,
    })
}

pub fn cmd_probe(config: &Config, out_dir: &Path, threads: usize) -> Result<()> {
    let summary = run_probe(config)?;
    let ctx = OutputContext::new(config, out_dir, threads);
    let rows = if summary.tuples == 0 {
        Vec::new()
    } else {
        vec![vec![
            summary.kind.clone(),
            summary.model.clone(),
            summary.tuples.to_string(),
            fmt(summary.passes as f64 / summary.tuples as f64),
            fmt(summary.worst_margin),
            fmt(summary.mean_margin),
        ]]
    };
    ctx.write_csv(
        "probe.csv",
        &["probe", "model", "tuples", "pass_rate", "worst_margin", "mean_margin"],
        &rows,
    )?;
    ctx.write_meta()?;
    Ok(())
}

/// Distance between two sample CSV files, printed to standard output.
pub fn cmd_wasserstein(file_a: &Path, file_b: &Path, exact: bool, seed: u64) -> Result<()> {
    let a = ParticleEnsemble::read_csv_path(file_a)?;
    let b = ParticleEnsemble::read_csv_path(file_b)?;
    if a.state_dim() != b.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: a.state_dim(),
            got: b.state_dim(),
        });
    }
    if exact {
        let d = measure::w2_assignment(&a, &b, measure::ASSIGNMENT_MAX_N)?;
        println!("{d}");
    } else if a.state_dim() == 1 {
        let xa: Vec<f64> = a.rows().map(|r| r[0]).collect();
        let xb: Vec<f64> = b.rows().map(|r| r[0]).collect();
        let d = measure::w2_sorted_1d(&xa, &xb)?;
        println!("{d}");
    } else {
        let plan = RngPlan::new(seed);
        let s = measure::sliced_w2(&a, &b, SLICED_DIRECTIONS, &plan)?;
        println!("{} {}", s.value, s.std_error);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Argument parsing and dispatch.
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(name = "mfsim", version, about = "Weakly interacting particle and field simulations")]
struct CliArgs {
    #[command(subcommand)]
    command: CommandArgs,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum CommandArgs {
    /// Run one interacting or reference simulation.
    Simulate(RunArgs),
    /// Convergence sweep over particle counts N.
    SweepN(RunArgs),
    /// Shared-noise Galerkin refinement sweep over mode counts.
    SweepGalerkin(RunArgs),
    /// Random-tuple coercivity / monotonicity inequality report.
    Probe(RunArgs),
    /// Distance between two sample CSV files.
    Wasserstein {
        file_a: PathBuf,
        file_b: PathBuf,
        /// Exact small-N assignment distance instead of sorted/sliced.
        #[arg(long)]
        exact: bool,
        /// Seed for sliced directions.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(args: &RunArgs) -> Result<Config> {
    let mut config = Config::from_path(&args.config)?;
    if let Some(seed) = args.seed {
        config.run.seed = seed;
    }
    Ok(config)
}

fn with_pool<F: FnOnce() -> Result<()> + Send>(threads: usize, f: F) -> Result<()> {
    if threads == 0 {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(f)
}

fn exit_code_of(err: &Error) -> i32 {
    match err {
        Error::BlowUp { .. } => EXIT_BLOWUP,
        Error::Io(_) => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

/// Entry point for the `mfsim` binary; returns the process exit code.
pub fn run() -> i32 {
    let cli = CliArgs::parse();
    let outcome = match &cli.command {
        CommandArgs::Simulate(args) => load_config(args).and_then(|config| {
            with_pool(args.threads, || {
                cmd_simulate(&config, &args.out, args.threads)
            })
        }),
        CommandArgs::SweepN(args) => load_config(args).and_then(|config| {
            with_pool(args.threads, || cmd_sweep_n(&config, &args.out, args.threads))
        }),
        CommandArgs::SweepGalerkin(args) => load_config(args).and_then(|config| {
            with_pool(args.threads, || {
                cmd_sweep_galerkin(&config, &args.out, args.threads)
            })
        }),
        CommandArgs::Probe(args) => load_config(args).and_then(|config| {
            with_pool(args.threads, || cmd_probe(&config, &args.out, args.threads))
        }),
        CommandArgs::Wasserstein {
            file_a,
            file_b,
            exact,
            seed,
        } => cmd_wasserstein(file_a, file_b, *exact, *seed),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code_of(&err)
        }
    }
}
