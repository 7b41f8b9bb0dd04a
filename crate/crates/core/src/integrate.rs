//! Time steppers and system drivers for the N-interacting system and the
//! large-N mean-field reference: explicit and semi-implicit Euler-Maruyama,
//! and deterministic RK4 for noiseless models.
//!
//! Within one Euler-Maruyama step the empirical measure is frozen at the step
//! start, so all particles update simultaneously and the step is
//! embarrassingly parallel. RK4 treats the N-particle system as one coupled
//! ODE and re-evaluates the measure at each stage; freezing it would cost an
//! order of accuracy.

use rayon::prelude::*;

use crate::models::{DriftContext, ModelSpec};
use crate::reduce::canonical_mean;
use crate::rng::RngPlan;
use crate::state::{
    empirical_snapshot, v_norm_of, MeasureSnapshot, ParticleEnsemble, PathRecord,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    ExplicitEm,
    SemiImplicitEm,
    Rk4,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::ExplicitEm => "explicit_em",
            Scheme::SemiImplicitEm => "semi_implicit_em",
            Scheme::Rk4 => "rk4",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepConfig {
    pub dt: f64,
    pub scheme: Scheme,
    pub t_end: f64,
    pub record_stride: usize,
}

impl StepConfig {
    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config("dt must be positive and finite".into()));
        }
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(Error::Config("t_end must be positive and finite".into()));
        }
        if self.dt > self.t_end {
            return Err(Error::Config("dt exceeds t_end".into()));
        }
        if self.record_stride < 1 {
            return Err(Error::Config("record_stride must be >= 1".into()));
        }
        if self.scheme == Scheme::Rk4 && !model.is_noiseless() {
            return Err(Error::Config(
                "rk4 is restricted to noiseless models (sigma = 0 or noise_modes = 0)".into(),
            ));
        }
        if self.scheme == Scheme::SemiImplicitEm && model.stiff_diagonal().is_none() {
            return Err(Error::Config(
                "semi_implicit_em needs a model with a stiff linear diagonal".into(),
            ));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> u64 {
        ((self.t_end / self.dt).round() as u64).max(1)
    }
}

/// Per-step time series of the moment-bound quantities monitored during a
/// run: the particle-averaged squared H-norm (with its running sup) and the
/// running left-endpoint integral of the particle-averaged V-norm to the
/// alpha, plus the first-coordinate mean and second moment.
#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    pub times: Vec<f64>,
    pub mean_h2: Vec<f64>,
    pub sup_mean_h2: Vec<f64>,
    pub int_v_alpha: Vec<f64>,
    pub mean_first: Vec<f64>,
    pub msq_first: Vec<f64>,
}

impl Diagnostics {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub final_ensemble: ParticleEnsemble,
    pub paths: Vec<PathRecord>,
    pub diagnostics: Diagnostics,
    /// Set when the run stands in for the mean-field limit law.
    pub reference: bool,
    /// Full ensemble at every recorded time, when requested.
    pub snapshots: Option<Vec<ParticleEnsemble>>,
}

impl RunResult {
    /// Marginal sample set at the final time, for Wasserstein comparisons.
    pub fn final_marginal(&self) -> &ParticleEnsemble {
        &self.final_ensemble
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Number of leading particles whose paths are recorded.
    pub tracked: usize,
    /// Keep the whole ensemble at every recorded step.
    pub keep_snapshots: bool,
    /// Noise-stream assignment per particle; identity when absent.
    pub stream_ids: Option<Vec<u64>>,
}

fn check_compatible(model: &ModelSpec, ens: &ParticleEnsemble) -> Result<()> {
    if ens.kind() != model.state_kind() {
        return Err(Error::KindMismatch {
            expected: model.state_kind().name(),
            got: ens.kind().name(),
        });
    }
    if ens.state_dim() != model.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.state_dim(),
            got: ens.state_dim(),
        });
    }
    Ok(())
}

/// Noise increment B dW for one particle over one step, drawn from the
/// particle's counter stream: draw index d addresses mode d, so realizations
/// of shared modes agree across Galerkin resolutions.
fn noise_increment(
    model: &ModelSpec,
    ctx: &DriftContext<'_>,
    t: f64,
    u: &[f64],
    plan: &RngPlan,
    stream: u64,
    step: u64,
    dt: f64,
    out: &mut [f64],
) -> Result<()> {
    match ctx.diffusion(t, u)? {
        crate::models::Diffusion::None => out.fill(0.0),
        crate::models::Diffusion::Scalar(amp) => {
            out[0] = amp * dt.sqrt() * plan.normal(stream, step, 0);
        }
        crate::models::Diffusion::PerMode(amps) => {
            debug_assert_eq!(amps.len(), model.state_dim());
            for (k, (o, amp)) in out.iter_mut().zip(&amps).enumerate() {
                *o = if *amp > 0.0 {
                    amp * dt.sqrt() * plan.normal(stream, step, k as u32)
                } else {
                    0.0
                };
            }
        }
    }
    Ok(())
}

fn step_em(
    ens: &ParticleEnsemble,
    model: &ModelSpec,
    step_index: u64,
    cfg: &StepConfig,
    plan: &RngPlan,
    stream_ids: &[u64],
) -> Result<ParticleEnsemble> {
    let dim = ens.state_dim();
    let t = step_index as f64 * cfg.dt;
    let snap = empirical_snapshot(ens);
    let ctx = DriftContext::new(model, &snap)?;
    let semi_implicit = cfg.scheme == Scheme::SemiImplicitEm;
    let diag = if semi_implicit {
        model.stiff_diagonal().ok_or_else(|| {
            Error::Config("semi_implicit_em needs a model with a stiff linear diagonal".into())
        })?
    } else {
        Vec::new()
    };

    let rows: Result<Vec<Vec<f64>>> = (0..ens.n_particles())
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let u = ens.row(i);
            let mut noise = vec![0.0; dim];
            noise_increment(
                model,
                &ctx,
                t,
                u,
                plan,
                stream_ids[i],
                step_index,
                cfg.dt,
                &mut noise,
            )?;
            let mut next = vec![0.0; dim];
            if semi_implicit {
                let nonstiff = ctx.drift_nonstiff(t, u)?;
                for k in 0..dim {
                    next[k] =
                        (u[k] + cfg.dt * nonstiff[k] + noise[k]) / (1.0 + diag[k] * cfg.dt);
                }
            } else {
                let drift = ctx.drift(t, u)?;
                for k in 0..dim {
                    next[k] = u[k] + cfg.dt * drift[k] + noise[k];
                }
            }
            Ok(next)
        })
        .collect();
    let rows = rows?;

    let mut next = ens.clone();
    for (i, row) in rows.iter().enumerate() {
        next.row_mut(i).copy_from_slice(row);
    }
    Ok(next)
}

/// Drift of the whole coupled system against its own empirical measure.
fn system_drift(model: &ModelSpec, ens: &ParticleEnsemble, t: f64) -> Result<Vec<f64>> {
    let snap = MeasureSnapshot::from_raw(ens.kind(), ens.state_dim(), ens.states());
    let ctx = DriftContext::new(model, &snap)?;
    let dim = ens.state_dim();
    let rows: Result<Vec<Vec<f64>>> = (0..ens.n_particles())
        .into_par_iter()
        .map(|i| ctx.drift(t, ens.row(i)))
        .collect();
    let rows = rows?;
    let mut flat = vec![0.0; ens.n_particles() * dim];
    for (i, row) in rows.iter().enumerate() {
        flat[i * dim..(i + 1) * dim].copy_from_slice(row);
    }
    Ok(flat)
}

fn step_rk4(
    ens: &ParticleEnsemble,
    model: &ModelSpec,
    step_index: u64,
    cfg: &StepConfig,
) -> Result<ParticleEnsemble> {
    let t = step_index as f64 * cfg.dt;
    let dt = cfg.dt;
    let base = ens.states().to_vec();
    let shifted = |k: &[f64], c: f64| -> ParticleEnsemble {
        let mut stage = ens.clone();
        for (s, (b, kv)) in stage.states_mut().iter_mut().zip(base.iter().zip(k)) {
            *s = b + c * kv;
        }
        stage
    };
    let k1 = system_drift(model, ens, t)?;
    let k2 = system_drift(model, &shifted(&k1, 0.5 * dt), t + 0.5 * dt)?;
    let k3 = system_drift(model, &shifted(&k2, 0.5 * dt), t + 0.5 * dt)?;
    let k4 = system_drift(model, &shifted(&k3, dt), t + dt)?;
    let mut next = ens.clone();
    for (idx, s) in next.states_mut().iter_mut().enumerate() {
        *s = base[idx] + dt / 6.0 * (k1[idx] + 2.0 * k2[idx] + 2.0 * k3[idx] + k4[idx]);
    }
    Ok(next)
}

fn step_with_streams(
    ens: &ParticleEnsemble,
    model: &ModelSpec,
    step_index: u64,
    cfg: &StepConfig,
    plan: &RngPlan,
    stream_ids: &[u64],
) -> Result<ParticleEnsemble> {
    let next = match cfg.scheme {
        Scheme::ExplicitEm | Scheme::SemiImplicitEm => {
            step_em(ens, model, step_index, cfg, plan, stream_ids)?
        }
        Scheme::Rk4 => step_rk4(ens, model, step_index, cfg)?,
    };
    if !next.check_finite() {
        let t = (step_index + 1) as f64 * cfg.dt;
        let mean_h2 = empirical_snapshot(ens).moment(2.0);
        return Err(Error::BlowUp {
            t,
            detail: format!("mean squared H-norm before the failing step was {mean_h2:.6e}"),
        });
    }
    Ok(next)
}

/// Advance the interacting system by one step. The measure snapshot is taken
/// at the step start; every particle reads it and writes only its own row.
pub fn step_interacting(
    ens: &ParticleEnsemble,
    model: &ModelSpec,
    step_index: u64,
    cfg: &StepConfig,
    plan: &RngPlan,
) -> Result<ParticleEnsemble> {
    check_compatible(model, ens)?;
    cfg.validate(model)?;
    let ids: Vec<u64> = (0..ens.n_particles() as u64).collect();
    step_with_streams(ens, model, step_index, cfg, plan, &ids)
}

/// Run the interacting system to t_end, recording tracked paths and the
/// moment-bound diagnostics every `record_stride` steps.
pub fn run_interacting(
    model: &ModelSpec,
    ens0: &ParticleEnsemble,
    cfg: &StepConfig,
    plan: &RngPlan,
) -> Result<RunResult> {
    run_interacting_opts(
        model,
        ens0,
        cfg,
        plan,
        &RunOptions {
            tracked: 1,
            ..RunOptions::default()
        },
    )
}

pub fn run_interacting_opts(
    model: &ModelSpec,
    ens0: &ParticleEnsemble,
    cfg: &StepConfig,
    plan: &RngPlan,
    opts: &RunOptions,
) -> Result<RunResult> {
    check_compatible(model, ens0)?;
    cfg.validate(model)?;
    if !ens0.check_finite() {
        return Err(Error::Config("initial ensemble has non-finite entries".into()));
    }
    let n = ens0.n_particles();
    let stream_ids: Vec<u64> = match &opts.stream_ids {
        Some(ids) => {
            if ids.len() != n {
                return Err(Error::Config("stream_ids length must equal n_particles".into()));
            }
            ids.clone()
        }
        None => (0..n as u64).collect(),
    };
    let alpha = model.alpha();
    let tracked = opts.tracked.min(n);
    let n_steps = cfg.n_steps();

    let mut ens = ens0.clone();
    let mut paths: Vec<PathRecord> = (0..tracked).map(|_| PathRecord::new(alpha)).collect();
    let mut path_v_int = vec![0.0; tracked];
    let mut diagnostics = Diagnostics::default();
    let mut snapshots: Option<Vec<ParticleEnsemble>> =
        opts.keep_snapshots.then(Vec::new);
    let mut sup_mean_h2 = f64::NEG_INFINITY;
    let mut ens_v_int = 0.0;

    let record = |t: f64,
                      ens: &ParticleEnsemble,
                      paths: &mut Vec<PathRecord>,
                      path_v_int: &[f64],
                      sup_mean_h2: &mut f64,
                      ens_v_int: f64,
                      snapshots: &mut Option<Vec<ParticleEnsemble>>,
                      diagnostics: &mut Diagnostics| {
        let snap = empirical_snapshot(ens);
        let mean_h2 = snap.moment(2.0);
        *sup_mean_h2 = sup_mean_h2.max(mean_h2);
        let mean_first = snap.mean_vector()[0];
        let msq_first = canonical_mean(snap.samples().map(|r| r[0] * r[0]).collect());
        diagnostics.times.push(t);
        diagnostics.mean_h2.push(mean_h2);
        diagnostics.sup_mean_h2.push(*sup_mean_h2);
        diagnostics.int_v_alpha.push(ens_v_int);
        diagnostics.mean_first.push(mean_first);
        diagnostics.msq_first.push(msq_first);
        for (p, (path, v_int)) in paths.iter_mut().zip(path_v_int).enumerate() {
            path.push(t, ens.row(p).to_vec(), *v_int);
        }
        if let Some(snaps) = snapshots {
            snaps.push(ens.clone());
        }
    };

    record(
        0.0,
        &ens,
        &mut paths,
        &path_v_int,
        &mut sup_mean_h2,
        ens_v_int,
        &mut snapshots,
        &mut diagnostics,
    );

    for step in 0..n_steps {
        // Left-endpoint quadrature of the V-norm integrals on the step grid.
        let v_alpha_mean = canonical_mean(
            ens.rows()
                .map(|r| v_norm_of(ens.kind(), r).powf(alpha))
                .collect(),
        );
        ens_v_int += v_alpha_mean * cfg.dt;
        for (p, v_int) in path_v_int.iter_mut().enumerate() {
            *v_int += v_norm_of(ens.kind(), ens.row(p)).powf(alpha) * cfg.dt;
        }

        ens = step_with_streams(&ens, model, step, cfg, plan, &stream_ids)?;

        let done = step + 1 == n_steps;
        if (step + 1) % cfg.record_stride as u64 == 0 || done {
            record(
                (step + 1) as f64 * cfg.dt,
                &ens,
                &mut paths,
                &path_v_int,
                &mut sup_mean_h2,
                ens_v_int,
                &mut snapshots,
                &mut diagnostics,
            );
        }
    }

    Ok(RunResult {
        final_ensemble: ens,
        paths,
        diagnostics,
        reference: false,
        snapshots,
    })
}

/// Frozen-law reference run: identical dynamics to [`run_interacting`] on an
/// n_ref-sized ensemble (n_ref far above the target N values), flagged as the
/// stand-in for the limit law; its final marginal is the comparison sample.
pub fn run_mean_field_reference(
    model: &ModelSpec,
    ens0: &ParticleEnsemble,
    cfg: &StepConfig,
    plan: &RngPlan,
) -> Result<RunResult> {
    let mut result = run_interacting(model, ens0, cfg, plan)?;
    result.reference = true;
    Ok(result)
}

/// Run the system twice, once plainly and once with initial states and noise
/// streams permuted, and verify the final states are the same permutation of
/// each other, bit-exactly.
pub fn exchangeability_check(
    model: &ModelSpec,
    ens0: &ParticleEnsemble,
    permutation: &[usize],
    cfg: &StepConfig,
    seed: u64,
) -> Result<bool> {
    let n = ens0.n_particles();
    let mut seen = vec![false; n];
    if permutation.len() != n {
        return Err(Error::Config("permutation length must equal n_particles".into()));
    }
    for &p in permutation {
        if p >= n || seen[p] {
            return Err(Error::Config("not a bijection on particle indices".into()));
        }
        seen[p] = true;
    }

    let plan = RngPlan::new(seed);
    let plain = run_interacting_opts(model, ens0, cfg, &plan, &RunOptions::default())?;

    let permuted_rows: Vec<Vec<f64>> = permutation.iter().map(|&p| ens0.row(p).to_vec()).collect();
    let permuted0 = ParticleEnsemble::from_rows(ens0.kind(), &permuted_rows);
    let stream_ids: Vec<u64> = permutation.iter().map(|&p| p as u64).collect();
    let permuted = run_interacting_opts(
        model,
        &permuted0,
        cfg,
        &plan,
        &RunOptions {
            stream_ids: Some(stream_ids),
            ..RunOptions::default()
        },
    )?;

    for i in 0..n {
        let a = plain.final_ensemble.row(permutation[i]);
        let b = permuted.final_ensemble.row(i);
        if a.iter().zip(b).any(|(x, y)| x.to_bits() != y.to_bits()) {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::SigmaSpec;
    use crate::oracles;
    use crate::state::StateKind;
    use std::f64::consts::PI;

    fn cfg(dt: f64, t_end: f64, scheme: Scheme) -> StepConfig {
        StepConfig {
            dt,
            scheme,
            t_end,
            record_stride: 1,
        }
    }

    #[test]
    fn single_atom_variance_drift_is_identity_without_noise() {
        // Var of one particle vanishes and sigma = 0: the step is a no-op.
        let model = ModelSpec::variance_drift(1, SigmaSpec::Zero).unwrap();
        let ens = ParticleEnsemble::from_scalars(&[1.25]);
        let plan = RngPlan::new(0);
        let next =
            step_interacting(&ens, &model, 0, &cfg(0.1, 1.0, Scheme::ExplicitEm), &plan).unwrap();
        assert_eq!(next.row(0)[0].to_bits(), 1.25f64.to_bits());
    }

    #[test]
    fn explicit_euler_linear_step_by_hand() {
        // Ensemble {1, -1} has Var = 1, so the unit particle sees drift -1:
        // one explicit Euler step with dt = 0.1 lands on 0.9.
        let model = ModelSpec::variance_drift(1, SigmaSpec::Zero).unwrap();
        let ens = ParticleEnsemble::from_scalars(&[1.0, -1.0]);
        let plan = RngPlan::new(0);
        let next =
            step_interacting(&ens, &model, 0, &cfg(0.1, 1.0, Scheme::ExplicitEm), &plan).unwrap();
        assert!((next.row(0)[0] - 0.9).abs() < 1e-15);
        assert!((next.row(1)[0] + 0.9).abs() < 1e-15);
    }

    #[test]
    fn semi_implicit_heat_step_by_hand() {
        // kappa = 0, noise off: a <- a / (1 + pi^2 dt).
        let model = ModelSpec::mean_coupled_heat(1, 0.0, 1.5, Some(0)).unwrap();
        let ens = ParticleEnsemble::from_rows(StateKind::SpectralSine, &[vec![1.0]]);
        let plan = RngPlan::new(0);
        let next = step_interacting(
            &ens,
            &model,
            0,
            &cfg(0.1, 1.0, Scheme::SemiImplicitEm),
            &plan,
        )
        .unwrap();
        let expect = 1.0 / (1.0 + PI * PI * 0.1);
        assert!((next.row(0)[0] - expect).abs() < 1e-12, "{}", next.row(0)[0]);
    }

    #[test]
    fn config_validation() {
        let model = ModelSpec::variance_drift(1, SigmaSpec::Constant(1.0)).unwrap();
        let bad = cfg(2.0, 1.0, Scheme::ExplicitEm);
        assert!(matches!(bad.validate(&model), Err(Error::Config(msg)) if msg.contains("dt")));
        // RK4 demands a noiseless model.
        let bad = cfg(0.1, 1.0, Scheme::Rk4);
        assert!(bad.validate(&model).is_err());
        let det = ModelSpec::svgd(1, 1, 1, SigmaSpec::Zero).unwrap();
        assert!(cfg(0.1, 1.0, Scheme::Rk4).validate(&det).is_ok());
        // Semi-implicit demands a stiff diagonal.
        assert!(cfg(0.1, 1.0, Scheme::SemiImplicitEm).validate(&det).is_err());
    }

    #[test]
    fn svgd_rk4_tracks_the_moment_ode() {
        // The N-particle second moment obeys dm/dt = -2m(1+m) exactly, for
        // any N; RK4 at dt = 1e-3 must match the closed form to 1e-5.
        let model = ModelSpec::svgd(1, 1, 1, SigmaSpec::Zero).unwrap();
        let plan = RngPlan::new(42);
        let n = 64;
        let mut vals: Vec<f64> = (0..n).map(|i| plan.normal(i as u64, 0, 0)).collect();
        let m2: f64 = vals.iter().map(|x| x * x).sum::<f64>() / n as f64;
        let scale = (1.0 / m2).sqrt();
        vals.iter_mut().for_each(|v| *v *= scale);
        let ens = ParticleEnsemble::from_scalars(&vals);
        let result =
            run_interacting(&model, &ens, &cfg(1e-3, 1.0, Scheme::Rk4), &plan).unwrap();
        let m2_end = *result.diagnostics.msq_first.last().unwrap();
        let expect = oracles::svgd_m2_analytic(1.0, 1.0);
        assert!(
            (m2_end - expect).abs() <= 1e-5 * expect,
            "m2(1) = {m2_end} vs analytic {expect}"
        );
    }

    #[test]
    fn variance_drift_mean_decay_and_em_order() {
        // At the Gaussian fixed point (v = 1) the empirical mean decays like
        // e^{-t}; halving dt must cut the Euler bias by about half (weak
        // order one). Common random numbers keep the comparison sharp.
        let model = ModelSpec::variance_drift(1, SigmaSpec::Constant(2.0f64.sqrt())).unwrap();
        let n = 100_000usize;
        let plan = RngPlan::new(7);
        let vals: Vec<f64> = (0..n).map(|i| 1.0 + plan.normal(i as u64, crate::rng::STEP_INIT, 0)).collect();
        let ens = ParticleEnsemble::from_scalars(&vals);

        let mean_at = |dt: f64| -> f64 {
            let result =
                run_interacting(&model, &ens, &cfg(dt, 1.0, Scheme::ExplicitEm), &plan).unwrap();
            *result.diagnostics.mean_first.last().unwrap()
        };
        let exact = (-1.0f64).exp();
        let coarse = mean_at(0.05);
        let fine = mean_at(0.025);
        assert!(
            (coarse - exact).abs() < 0.05 && (fine - exact).abs() < 0.05,
            "mean off the e^-t decay: {coarse} / {fine} vs {exact}"
        );
        let order = ((coarse - exact).abs() / (fine - exact).abs()).log2();
        assert!(order >= 0.8, "observed weak order {order}");
    }

    #[test]
    fn reference_is_same_code_path() {
        let model = ModelSpec::variance_drift(1, SigmaSpec::Constant(2.0f64.sqrt())).unwrap();
        let plan = RngPlan::new(3);
        let vals: Vec<f64> = (0..32).map(|i| plan.normal(i, crate::rng::STEP_INIT, 0)).collect();
        let ens = ParticleEnsemble::from_scalars(&vals);
        let c = cfg(0.01, 0.5, Scheme::ExplicitEm);
        let a = run_interacting(&model, &ens, &c, &plan).unwrap();
        let b = run_mean_field_reference(&model, &ens, &c, &plan).unwrap();
        assert!(b.reference);
        assert_eq!(a.final_ensemble, b.final_ensemble);
    }

    #[test]
    fn freezing_consistency_single_particle() {
        // N = 1 with a measure-independent model (kappa = 0) must equal the
        // classical EM step computed by hand, bit-exactly.
        let model = ModelSpec::mean_coupled_heat(3, 0.0, 1.5, None).unwrap();
        let ens = ParticleEnsemble::from_rows(StateKind::SpectralSine, &[vec![0.4, -0.2, 0.1]]);
        let plan = RngPlan::new(11);
        let c = cfg(0.01, 1.0, Scheme::ExplicitEm);
        let stepped = step_interacting(&ens, &model, 5, &c, &plan).unwrap();
        for k in 0..3usize {
            let lambda = crate::spectral::laplacian_eigenvalue(k + 1).unwrap();
            let u = ens.row(0)[k];
            let q_amp = ((k + 1) as f64).powf(-1.5);
            let noise = q_amp * c.dt.sqrt() * plan.normal(0, 5, k as u32);
            let hand = u + c.dt * (-0.0f64 * u - lambda * u) + noise;
            assert_eq!(stepped.row(0)[k].to_bits(), hand.to_bits(), "mode {k}");
        }
    }

    #[test]
    fn determinism_across_thread_counts() {
        let model = ModelSpec::allen_cahn(8, 1.5, None).unwrap();
        let rows: Vec<Vec<f64>> = (0..16)
            .map(|i| (0..8).map(|k| 0.5 / ((k + 1) as f64) * ((i + k) as f64 * 0.1).sin()).collect())
            .collect();
        let ens = ParticleEnsemble::from_rows(StateKind::SpectralSine, &rows);
        let plan = RngPlan::new(21);
        let c = cfg(1e-3, 0.05, Scheme::SemiImplicitEm);
        let run_with = |threads: usize| -> ParticleEnsemble {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| run_interacting(&model, &ens, &c, &plan).unwrap().final_ensemble)
        };
        let one = run_with(1);
        let four = run_with(4);
        assert_eq!(one, four);
    }

    #[test]
    fn exchangeability_identity_swap_reversal() {
        let c = cfg(0.01, 0.05, Scheme::SemiImplicitEm);
        let model = ModelSpec::allen_cahn(4, 1.5, None).unwrap();
        let rows: Vec<Vec<f64>> = (0..8)
            .map(|i| (0..4).map(|k| 0.3 * ((i * 4 + k) as f64 * 0.7).sin()).collect())
            .collect();
        let ens = ParticleEnsemble::from_rows(StateKind::SpectralSine, &rows);

        let identity: Vec<usize> = (0..8).collect();
        assert!(exchangeability_check(&model, &ens, &identity, &c, 5).unwrap());

        let mut swap = identity.clone();
        swap.swap(0, 1);
        assert!(exchangeability_check(&model, &ens, &swap, &c, 5).unwrap());

        let reversal: Vec<usize> = (0..8).rev().collect();
        assert!(exchangeability_check(&model, &ens, &reversal, &c, 5).unwrap());
    }

    #[test]
    fn exchangeability_rejects_non_bijections() {
        let model = ModelSpec::variance_drift(1, SigmaSpec::Zero).unwrap();
        let ens = ParticleEnsemble::from_scalars(&[1.0, 2.0]);
        let c = cfg(0.1, 0.2, Scheme::ExplicitEm);
        assert!(exchangeability_check(&model, &ens, &[0, 0], &c, 1).is_err());
    }

    #[test]
    fn blow_up_reports_time() {
        // A huge dt on the cubic-growth SVGD drift explodes immediately.
        let model = ModelSpec::svgd(2, 2, 2, SigmaSpec::Zero).unwrap();
        let ens = ParticleEnsemble::from_scalars(&[10.0, -10.0, 12.0]);
        let plan = RngPlan::new(1);
        let c = StepConfig {
            dt: 10.0,
            scheme: Scheme::ExplicitEm,
            t_end: 100.0,
            record_stride: 1,
        };
        let err = run_interacting(&model, &ens, &c, &plan).unwrap_err();
        match err {
            Error::BlowUp { t, .. } => assert!(t > 0.0),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn moment_diagnostics_stay_bounded() {
        // Light version of the stability gate: three seeds on the
        // variance-drift model at default parameters.
        let model = ModelSpec::variance_drift(1, SigmaSpec::Constant(2.0f64.sqrt())).unwrap();
        for seed in 1..=3u64 {
            let plan = RngPlan::new(seed);
            let vals: Vec<f64> =
                (0..128).map(|i| 1.0 + plan.normal(i as u64, crate::rng::STEP_INIT, 0)).collect();
            let ens = ParticleEnsemble::from_scalars(&vals);
            let result =
                run_interacting(&model, &ens, &cfg(1e-3, 1.0, Scheme::ExplicitEm), &plan).unwrap();
            let initial = result.diagnostics.mean_h2[0];
            let sup = *result.diagnostics.sup_mean_h2.last().unwrap();
            assert!(sup <= 50.0 * initial, "seed {seed}: sup {sup} vs initial {initial}");
        }
    }

    #[test]
    fn diagnostics_length_matches_recorded_steps() {
        let model = ModelSpec::svgd(1, 1, 1, SigmaSpec::Zero).unwrap();
        let ens = ParticleEnsemble::from_scalars(&[0.5, -0.5, 1.0]);
        let plan = RngPlan::new(2);
        let c = StepConfig {
            dt: 0.01,
            scheme: Scheme::Rk4,
            t_end: 0.1,
            record_stride: 3,
        };
        let result = run_interacting(&model, &ens, &c, &plan).unwrap();
        // Steps 3, 6, 9 and the final step 10, plus the initial record.
        assert_eq!(result.diagnostics.len(), 5);
        assert_eq!(result.paths[0].len(), 5);
        let v = &result.diagnostics.int_v_alpha;
        assert!(v.windows(2).all(|w| w[1] >= w[0]));
    }
}
