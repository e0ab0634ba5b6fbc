//! Single-shooting objective over signed pack powers with an adjoint gradient.
//!
//! Variables are pack-major: `x[j*h + k]` is pack `j` at step `k`, positive when
//! discharging. Energy and fade are eliminated by forward simulation.

use crate::aging::{delta_z, fade_rate, fade_rate_log_slope, pack_fade_pct, state_exponent, FADE_SEED_PCT};
use crate::costs::fade_cost_rate;
use crate::thermal::{temp_at_c, temp_slope};
use crate::types::{AgingParams, Scenario};

#[derive(Debug, Clone)]
pub(crate) struct PackModel {
    pub eta_c: f64,
    pub eta_d: f64,
    pub capacity: f64,
    /// Ah per kW over one step.
    pub ah_per_kw: f64,
    pub aging: AgingParams,
    pub temp_poly: [f64; 3],
    pub fade_pct0: f64,
    /// Dollars per percentage point of fade.
    pub fade_weight: f64,
    pub e0: f64,
    pub e_min: f64,
    pub e_max: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub retired: bool,
}

/// How `|p|` is evaluated.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Magnitude<'a> {
    /// `sqrt(p^2 + delta^2) - delta`.
    Smooth(f64),
    /// `sigma * p` with a fixed sign per variable (0 for variables pinned at zero).
    Signed(&'a [f64]),
}

impl Magnitude<'_> {
    #[inline]
    fn eval(&self, idx: usize, p: f64) -> (f64, f64) {
        match *self {
            Magnitude::Smooth(delta) => {
                let r = (p * p + delta * delta).sqrt();
                (r - delta, p / r)
            }
            Magnitude::Signed(signs) => {
                let s = signs[idx];
                (s * p, s)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Model {
    pub packs: Vec<PackModel>,
    pub demand: Vec<f64>,
    pub price: Vec<f64>,
    pub dt: f64,
    pub n: usize,
    pub h: usize,
}

/// Energy-constraint state for the augmented Lagrangian.
#[derive(Debug, Clone)]
pub(crate) struct Penalty {
    pub rho: f64,
    pub mu_lo: Vec<f64>,
    pub mu_hi: Vec<f64>,
    /// Bounds are tightened by this much.
    pub margin: f64,
}

impl Penalty {
    pub fn new(size: usize, rho: f64, margin: f64) -> Self {
        Penalty { rho, mu_lo: vec![0.0; size], mu_hi: vec![0.0; size], margin }
    }
}

impl Model {
    pub fn from_scenario(scenario: &Scenario) -> Self {
        let dt = scenario.dt_hours;
        let packs = scenario
            .fleet
            .iter()
            .map(|p| {
                let s = &p.spec;
                PackModel {
                    eta_c: s.eta_charge,
                    eta_d: s.eta_discharge,
                    capacity: s.capacity_kwh,
                    ah_per_kw: delta_z(1.0, s.nominal_voltage_v, dt),
                    aging: s.aging.clone(),
                    temp_poly: s.thermal.temp_poly,
                    fade_pct0: pack_fade_pct(s, &p.state),
                    fade_weight: fade_cost_rate(s, scenario.decom_cost_per_lb) / 100.0,
                    e0: p.state.energy_kwh,
                    e_min: s.bounds.e_min_kwh,
                    e_max: s.bounds.e_max_kwh,
                    p_min: s.bounds.p_min_kw,
                    p_max: s.bounds.p_max_kw,
                    retired: p.state.is_retired(s),
                }
            })
            .collect();
        Model {
            packs,
            demand: scenario.demand_kw.clone(),
            price: scenario.price_per_kwh.clone(),
            dt,
            n: scenario.n_packs(),
            h: scenario.horizon_steps,
        }
    }

    /// Cost of one pack and, optionally, its gradient (overwritten).
    pub fn pack_cost(&self, j: usize, x: &[f64], mag: Magnitude, grad: Option<&mut [f64]>) -> f64 {
        let pm = &self.packs[j];
        let h = self.h;
        let base = j * h;
        let row = &x[base..base + h];
        let a = state_exponent(&pm.aging);
        let loss_c = 1.0 - pm.eta_c;
        let loss_d = 1.0 / pm.eta_d - 1.0;

        let mut loss = 0.0;
        let mut q = pm.fade_pct0;
        let mut trace = [(0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64); 64];
        let mut heap_trace = Vec::new();
        let use_heap = h > trace.len();
        if use_heap {
            heap_trace.resize(h, (0.0, 0.0, 0.0, 0.0, 0.0));
        }
        for k in 0..h {
            let (s, ds) = mag.eval(base + k, row[k]);
            let c = 0.5 * (s - row[k]);
            let d = 0.5 * (s + row[k]);
            loss += self.price[k] * self.dt * (c * loss_c + d * loss_d);
            let dz = s * pm.ah_per_kw;
            let rate = s / pm.capacity;
            let temp = temp_at_c(&pm.temp_poly, rate);
            let r = fade_rate(&pm.aging, rate, temp);
            let qf = q.max(FADE_SEED_PCT);
            let qa = qf.powf(a);
            let entry = (ds, dz, r, qa, qf);
            if use_heap {
                heap_trace[k] = entry;
            } else {
                trace[k] = entry;
            }
            q += dz * r * qa;
        }
        let cost = loss + pm.fade_weight * (q - pm.fade_pct0);

        if let Some(g) = grad {
            let tr: &[(f64, f64, f64, f64, f64)] = if use_heap { &heap_trace } else { &trace[..h] };
            let mut lambda = pm.fade_weight;
            for k in (0..h).rev() {
                let (ds, dz, r, qa, qf) = tr[k];
                let dc = 0.5 * (ds - 1.0);
                let dd = 0.5 * (ds + 1.0);
                let mut gk = self.price[k] * self.dt * (dc * loss_c + dd * loss_d);
                if ds != 0.0 {
                    let s = dz / pm.ah_per_kw;
                    let rate = s / pm.capacity;
                    let temp = temp_at_c(&pm.temp_poly, rate);
                    let lslope = fade_rate_log_slope(&pm.aging, rate, temp, temp_slope(&pm.temp_poly, rate));
                    let ddz = ds * pm.ah_per_kw;
                    let drate = ds / pm.capacity;
                    gk += lambda * (ddz * r + dz * r * lslope * drate) * qa;
                }
                g[k] = gk;
                let dq = if qf > FADE_SEED_PCT || a == 0.0 { dz * r * a * qa / qf } else { 0.0 };
                lambda *= 1.0 + dq;
            }
        }
        cost
    }

    /// Objective summed over packs; `grad` (if any) is overwritten.
    pub fn cost(&self, x: &[f64], mag: Magnitude, mut grad: Option<&mut [f64]>) -> f64 {
        let h = self.h;
        let mut total = 0.0;
        for j in 0..self.n {
            let g = grad.as_deref_mut().map(|g| &mut g[j * h..(j + 1) * h]);
            total += self.pack_cost(j, x, mag, g);
        }
        total
    }

    /// Energies after each step for pack `j`.
    pub fn energies(&self, j: usize, x: &[f64], mag: Magnitude, out: &mut [f64]) {
        let pm = &self.packs[j];
        let base = j * self.h;
        let mut e = pm.e0;
        for k in 0..self.h {
            let p = x[base + k];
            let (s, _) = mag.eval(base + k, p);
            let c = 0.5 * (s - p);
            let d = 0.5 * (s + p);
            e += (c * pm.eta_c - d / pm.eta_d) * self.dt;
            out[k] = e;
        }
    }

    /// Augmented Lagrangian of the energy bounds, added to `grad`.
    #[cfg(test)]
    pub fn penalty(&self, x: &[f64], mag: Magnitude, pen: &Penalty, grad: &mut [f64]) -> f64 {
        let h = self.h;
        let mut e = vec![0.0; h];
        let mut total = 0.0;
        for j in 0..self.n {
            total += self.pack_penalty(j, x, mag, pen, &mut e, &mut grad[j * h..(j + 1) * h]);
        }
        total
    }

    /// Penalty of one pack, added to its gradient row. `e` is scratch of length `h`.
    pub fn pack_penalty(
        &self,
        j: usize,
        x: &[f64],
        mag: Magnitude,
        pen: &Penalty,
        e: &mut [f64],
        grad: &mut [f64],
    ) -> f64 {
        let h = self.h;
        let pm = &self.packs[j];
        self.energies(j, x, mag, e);
        let base = j * h;
        let mut total = 0.0;
        // After this loop e[k] holds dL/dE after step k.
        for k in 0..h {
            let i = base + k;
            let g_lo = pm.e_min + pen.margin - e[k];
            let g_hi = e[k] - (pm.e_max - pen.margin);
            let t_lo = (pen.mu_lo[i] + pen.rho * g_lo).max(0.0);
            let t_hi = (pen.mu_hi[i] + pen.rho * g_hi).max(0.0);
            total += (t_lo * t_lo - pen.mu_lo[i] * pen.mu_lo[i]) / (2.0 * pen.rho);
            total += (t_hi * t_hi - pen.mu_hi[i] * pen.mu_hi[i]) / (2.0 * pen.rho);
            e[k] = t_hi - t_lo;
        }
        let mut suffix = 0.0;
        for k in (0..h).rev() {
            let p = x[base + k];
            let (_, ds) = mag.eval(base + k, p);
            let dc = 0.5 * (ds - 1.0);
            let dd = 0.5 * (ds + 1.0);
            let de = (dc * pm.eta_c - dd / pm.eta_d) * self.dt;
            suffix += e[k];
            grad[k] += suffix * de;
        }
        total
    }

    /// Cost plus penalty of one pack; `grad` (length `h`) is overwritten.
    pub fn pack_objective(
        &self,
        j: usize,
        x: &[f64],
        mag: Magnitude,
        pen: &Penalty,
        scratch: &mut [f64],
        grad: &mut [f64],
    ) -> f64 {
        let c = self.pack_cost(j, x, mag, Some(&mut *grad));
        c + self.pack_penalty(j, x, mag, pen, scratch, grad)
    }

    /// Largest energy-bound violation (against tightened bounds) and multiplier update.
    pub fn update_multipliers(&self, x: &[f64], mag: Magnitude, pen: &mut Penalty) -> f64 {
        let h = self.h;
        let mut e = vec![0.0; h];
        let mut worst = 0.0f64;
        for j in 0..self.n {
            let pm = &self.packs[j];
            self.energies(j, x, mag, &mut e);
            for k in 0..h {
                let i = j * h + k;
                let g_lo = pm.e_min + pen.margin - e[k];
                let g_hi = e[k] - (pm.e_max - pen.margin);
                worst = worst.max(g_lo).max(g_hi);
                pen.mu_lo[i] = (pen.mu_lo[i] + pen.rho * g_lo).max(0.0);
                pen.mu_hi[i] = (pen.mu_hi[i] + pen.rho * g_hi).max(0.0);
            }
        }
        worst
    }
}
