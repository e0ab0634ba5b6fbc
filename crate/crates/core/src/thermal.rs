//! Lumped single-node thermal model and its quadratic steady-state fit.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::types::ThermalParams;

/// Explicit Euler step of `m*c*dT/dt = R0*i^2 - (T - T_env)/R_conv`.
pub fn ode_step(temp_k: f64, current_a: f64, params: &ThermalParams, dt_s: f64) -> Result<f64> {
    let limit_s = params.time_constant_s();
    if dt_s > limit_s {
        return Err(Error::StepTooLarge { dt_s, limit_s });
    }
    let heat_w = params.internal_resistance_ohm * current_a * current_a;
    let cooling_w = (temp_k - params.t_env_k) / params.r_conv();
    Ok(temp_k + (heat_w - cooling_w) * dt_s / (params.mass_kg * params.specific_heat))
}

/// Cell current at a given C-rate.
pub fn cell_current(c_rate: f64, params: &ThermalParams) -> f64 {
    c_rate * params.cell_capacity_ah
}

/// Analytic equilibrium of [`ode_step`] at constant C-rate.
pub fn steady_state_temp(c_rate: f64, params: &ThermalParams) -> f64 {
    let i = cell_current(c_rate, params);
    params.t_env_k + params.internal_resistance_ohm * i * i * params.r_conv()
}

/// Runs [`ode_step`] from `start_k` until the step change falls below `tol_k`.
/// Returns the final temperature and the number of steps taken.
pub fn equilibrate(
    start_k: f64,
    current_a: f64,
    params: &ThermalParams,
    dt_s: f64,
    tol_k: f64,
    max_steps: usize,
) -> Result<(f64, usize)> {
    let mut t = start_k;
    for n in 1..=max_steps {
        let next = ode_step(t, current_a, params, dt_s)?;
        let change = (next - t).abs();
        t = next;
        if change < tol_k {
            return Ok((t, n));
        }
    }
    Ok((t, max_steps))
}

pub fn temp_at_c(poly: &[f64; 3], c_rate: f64) -> f64 {
    poly[0] + poly[1] * c_rate + poly[2] * c_rate * c_rate
}

/// `dT/dC` of the quadratic.
pub fn temp_slope(poly: &[f64; 3], c_rate: f64) -> f64 {
    poly[1] + 2.0 * poly[2] * c_rate
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TempFit {
    pub coeffs: [f64; 3],
    pub residual_norm: f64,
}

/// Least-squares quadratic through the steady-state curve.
///
/// The constant term is pinned to `t_env_k` so the fit keeps the no-current
/// equilibrium exact; the linear and quadratic terms are free.
pub fn fit_temp_polynomial(params: &ThermalParams, c_grid: &[f64]) -> Result<TempFit> {
    let mut distinct: Vec<f64> = c_grid.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::DegenerateGrid(distinct.len()));
    }
    let n = c_grid.len();
    let a = DMatrix::from_fn(n, 2, |r, c| if c == 0 { c_grid[r] } else { c_grid[r] * c_grid[r] });
    let rise = DVector::from_iterator(n, c_grid.iter().map(|&c| steady_state_temp(c, params) - params.t_env_k));
    let svd = a.clone().svd(true, true);
    let x = svd.solve(&rise, 1e-14).map_err(|e| Error::Shape(format!("least squares failed: {e}")))?;
    let residual_norm = (&a * &x - &rise).norm();
    Ok(TempFit { coeffs: [params.t_env_k, x[0], x[1]], residual_norm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::fixtures::cell_thermal;
    use proptest::prelude::*;

    #[test]
    fn ambient_is_an_equilibrium() {
        let p = cell_thermal();
        assert_eq!(ode_step(298.0, 0.0, &p, 10.0).unwrap(), 298.0);
        assert_eq!(steady_state_temp(0.0, &p), p.t_env_k);
    }

    #[test]
    fn euler_converges_to_analytic_steady_state_at_one_c() {
        let p = cell_thermal();
        let i = cell_current(1.0, &p);
        let expected = 298.0 + 0.008 * 2.3 * 2.3 / (5.8 * 0.0053);
        let (t, _) = equilibrate(298.0, i, &p, 30.0, 1e-12, 1_000_000).unwrap();
        assert!((t - expected).abs() < 1e-8, "{t} vs {expected}");
        assert!((steady_state_temp(1.0, &p) - expected).abs() < 1e-12);
    }

    #[test]
    fn rejects_unstable_step() {
        let p = cell_thermal();
        let limit = p.time_constant_s();
        assert!((limit - 0.072 * 1150.0 / (5.8 * 0.0053)).abs() < 1e-9);
        assert!(matches!(ode_step(300.0, 1.0, &p, limit * 1.01), Err(Error::StepTooLarge { .. })));
    }

    #[test]
    fn table_polynomial_values() {
        let poly = [298.0, 0.0, 1.421];
        assert_eq!(temp_at_c(&poly, 0.0), 298.0);
        assert!((temp_at_c(&poly, 1.0) - 299.421).abs() < 1e-12);
        assert!((temp_at_c(&poly, 2.0) - 303.684).abs() < 1e-12);
    }

    #[test]
    fn quadratic_scaling_of_rise() {
        let p = cell_thermal();
        let r1 = steady_state_temp(1.0, &p) - 298.0;
        let r2 = steady_state_temp(2.0, &p) - 298.0;
        assert!((r2 - 4.0 * r1).abs() < 1e-12);
    }

    #[test]
    fn fit_recovers_exact_quadratic() {
        let p = cell_thermal();
        let grid: Vec<f64> = (0..=40).map(|i| i as f64 * 0.1).collect();
        let fit = fit_temp_polynomial(&p, &grid).unwrap();
        let a3 = 0.008 * 2.3 * 2.3 / (5.8 * 0.0053);
        assert_eq!(fit.coeffs[0], 298.0);
        assert!(fit.coeffs[1].abs() < 1e-9);
        assert!((fit.coeffs[2] - a3).abs() < 1e-9);
        assert!(fit.residual_norm < 1e-9);
        // Cell parameters land within a few percent of the tabulated 1.421.
        assert!((fit.coeffs[2] - 1.421).abs() / 1.421 < 0.05);
    }

    #[test]
    fn fit_shifts_with_ambient_only() {
        let mut p = cell_thermal();
        let grid = [0.0, 1.0, 2.0, 3.0, 4.0];
        let base = fit_temp_polynomial(&p, &grid).unwrap();
        p.t_env_k = 313.0;
        p.temp_poly[0] = 313.0;
        let hot = fit_temp_polynomial(&p, &grid).unwrap();
        assert_eq!(hot.coeffs[0], 313.0);
        assert!((hot.coeffs[2] - base.coeffs[2]).abs() < 1e-12);
    }

    #[test]
    fn degenerate_grid_is_rejected() {
        let p = cell_thermal();
        assert!(matches!(fit_temp_polynomial(&p, &[1.0, 1.0, 2.0]), Err(Error::DegenerateGrid(2))));
    }

    proptest! {
        #[test]
        fn steady_state_above_ambient(c in 0.0f64..5.0) {
            let p = cell_thermal();
            let t = steady_state_temp(c, &p);
            prop_assert!(t >= p.t_env_k);
            prop_assert_eq!(t == p.t_env_k, c == 0.0);
        }

        #[test]
        fn ode_contracts_toward_equilibrium(c in 0.0f64..4.0, offset in 0.01f64..20.0, dt in 1.0f64..2000.0) {
            let p = cell_thermal();
            let i = cell_current(c, &p);
            let ss = steady_state_temp(c, &p);
            let above = ode_step(ss + offset, i, &p, dt).unwrap();
            prop_assert!(above < ss + offset);
            prop_assert!(above >= ss - 1e-9);
            let below = ode_step(ss - offset, i, &p, dt).unwrap();
            prop_assert!(below > ss - offset);
            prop_assert!(below <= ss + 1e-9);
        }
    }
}
