//! Independent analytic and ODE-based references for the mean-field limits
//! of the shipped models. These are used by the acceptance tests and share
//! no integrator code with [`crate::integrate`].

use crate::spectral::laplacian_eigenvalue_unchecked;

/// Second moment of the SVGD system with k = m = n = 1 and sigma = 0, where
/// the moment obeys dm/dt = -2 m (1 + m) for every particle count:
/// m(t) = c e^(-2t) / (1 - c e^(-2t)) with c = m0 / (1 + m0).
pub fn svgd_m2_analytic(m2_0: f64, t: f64) -> f64 {
    assert!(m2_0 >= 0.0);
    let c = m2_0 / (1.0 + m2_0);
    let e = (-2.0 * t).exp();
    c * e / (1.0 - c * e)
}

/// Closed moment system of the variance-drift model with Phi(u) = u^2 / 2 and
/// sigma = sqrt(2): dm/dt = -v m, dv/dt = 2 (1 - v^2). Solved by a dedicated
/// fixed-step RK4 at dt = 1e-5, independent of the particle integrator.
pub fn variance_model_moment_ode(m1_0: f64, v_0: f64, t_grid: &[f64]) -> Vec<(f64, f64)> {
    assert!(v_0 >= 0.0);
    let rhs = |m: f64, v: f64| -> (f64, f64) { (-v * m, 2.0 * (1.0 - v * v)) };
    let dt = 1e-5f64;
    let mut out = Vec::with_capacity(t_grid.len());
    let mut t = 0.0;
    let mut m = m1_0;
    let mut v = v_0;
    for &target in t_grid {
        assert!(target >= t, "t_grid must be nondecreasing");
        while t < target - 1e-12 {
            let h = dt.min(target - t);
            let (k1m, k1v) = rhs(m, v);
            let (k2m, k2v) = rhs(m + 0.5 * h * k1m, v + 0.5 * h * k1v);
            let (k3m, k3v) = rhs(m + 0.5 * h * k2m, v + 0.5 * h * k2v);
            let (k4m, k4v) = rhs(m + h * k3m, v + h * k3v);
            m += h / 6.0 * (k1m + 2.0 * k2m + 2.0 * k3m + k4m);
            v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
            t += h;
        }
        out.push((m, v));
    }
    out
}

/// Mean of mode k of the reduced mean-coupled heat model: the noise is
/// mean-zero, so E a_k obeys d/dt E a_k = -(lambda_k + kappa) E a_k.
pub fn heat_mean_mode_analytic(a_k0: f64, k: usize, kappa: f64, t: f64) -> f64 {
    assert!(k >= 1);
    a_k0 * (-(laplacian_eigenvalue_unchecked(k) + kappa) * t).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn svgd_m2_fixed_point_and_initial_condition() {
        for t in [0.0, 0.3, 1.0, 5.0] {
            assert_eq!(svgd_m2_analytic(0.0, t), 0.0);
        }
        for m0 in [0.1, 1.0, 4.0] {
            assert!((svgd_m2_analytic(m0, 0.0) - m0).abs() < 1e-14);
        }
    }

    #[test]
    fn svgd_m2_half_log_two() {
        // c = 1/2 and e^(-2t) = 1/2 at t = ln(2)/2, so m = (1/4)/(3/4) = 1/3.
        let t = 0.5 * 2.0f64.ln();
        assert!((svgd_m2_analytic(1.0, t) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn svgd_m2_satisfies_its_ode() {
        let h = 1e-5;
        for t in [0.1, 0.4, 0.9, 2.0] {
            for m0 in [0.3, 1.0, 2.5] {
                let m = svgd_m2_analytic(m0, t);
                let dm = (svgd_m2_analytic(m0, t + h) - svgd_m2_analytic(m0, t - h)) / (2.0 * h);
                assert!(
                    (dm + 2.0 * m * (1.0 + m)).abs() < 1e-8,
                    "residual at t={t}, m0={m0}"
                );
            }
        }
    }

    #[test]
    fn svgd_m2_cross_checked_by_rk4() {
        // Independent RK4 on dm/dt = -2m(1+m) at dt = 1e-5.
        let mut m = 1.0f64;
        let dt = 1e-5;
        for _ in 0..100_000 {
            let f = |m: f64| -2.0 * m * (1.0 + m);
            let k1 = f(m);
            let k2 = f(m + 0.5 * dt * k1);
            let k3 = f(m + 0.5 * dt * k2);
            let k4 = f(m + dt * k3);
            m += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        assert!((m - svgd_m2_analytic(1.0, 1.0)).abs() < 1e-10);
    }

    #[test]
    fn variance_moments_at_the_gaussian_fixed_point() {
        let out = variance_model_moment_ode(1.0, 1.0, &[1.0]);
        let (m, v) = out[0];
        assert!((m - (-1.0f64).exp()).abs() < 1e-9, "mean {m}");
        assert!((v - 1.0).abs() < 1e-10, "variance {v}");

        // Zero mean stays zero.
        let out = variance_model_moment_ode(0.0, 1.0, &[0.5, 2.0]);
        for (m, v) in out {
            assert_eq!(m, 0.0);
            assert!((v - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn variance_fixed_point_holds_to_t_ten() {
        let out = variance_model_moment_ode(1.0, 1.0, &[10.0]);
        assert!((out[0].1 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn variance_flow_from_zero_matches_tanh() {
        // dv/dt = 2(1 - v^2) from v(0) = 0 integrates to v = tanh(2t).
        let ts = [0.1, 0.5, 1.0];
        let out = variance_model_moment_ode(0.5, 0.0, &ts);
        for (&t, (_, v)) in ts.iter().zip(&out) {
            assert!((v - (2.0 * t).tanh()).abs() < 1e-9, "t={t}: v={v}");
        }
    }

    #[test]
    fn heat_mean_examples() {
        let v = heat_mean_mode_analytic(1.0, 1, 0.0, 1.0);
        assert!((v - (-PI * PI).exp()).abs() < 1e-12);
        assert_eq!(heat_mean_mode_analytic(0.7, 3, 2.0, 0.0), 0.7);
        let lambda_2 = 4.0 * PI * PI;
        assert_eq!(heat_mean_mode_analytic(0.9, 2, -lambda_2, 3.0), 0.9);
    }
}
