//! Energy bookkeeping for one pack and one fleet over a horizon.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{PackSpec, PackState};

/// Maximum acceptable supply-demand mismatch per step.
pub const BALANCE_TOL_KW: f64 = 1e-6;
/// Slack allowed on the energy bounds.
pub const ENERGY_TOL_KWH: f64 = 1e-9;

/// One pack's command for one step. At most one component is nonzero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PowerCommand {
    pub p_charge_kw: f64,
    pub p_discharge_kw: f64,
}

impl PowerCommand {
    pub const IDLE: PowerCommand = PowerCommand { p_charge_kw: 0.0, p_discharge_kw: 0.0 };

    pub fn charge(p_kw: f64) -> Self {
        PowerCommand { p_charge_kw: p_kw, p_discharge_kw: 0.0 }
    }

    pub fn discharge(p_kw: f64) -> Self {
        PowerCommand { p_charge_kw: 0.0, p_discharge_kw: p_kw }
    }

    /// Positive net power discharges, negative charges.
    pub fn from_net(p_kw: f64) -> Self {
        if p_kw >= 0.0 {
            Self::discharge(p_kw)
        } else {
            Self::charge(-p_kw)
        }
    }

    pub fn net_kw(&self) -> f64 {
        self.p_discharge_kw - self.p_charge_kw
    }

    pub fn magnitude_kw(&self) -> f64 {
        self.p_discharge_kw + self.p_charge_kw
    }

    pub fn is_idle(&self) -> bool {
        self.p_charge_kw == 0.0 && self.p_discharge_kw == 0.0
    }

    pub fn is_exclusive(&self) -> bool {
        self.p_charge_kw * self.p_discharge_kw == 0.0
    }
}

/// Signed net power per pack and step; row `j` is pack `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    net_kw: Vec<Vec<f64>>,
}

impl Schedule {
    pub fn idle(n_packs: usize, horizon: usize) -> Self {
        Schedule { net_kw: vec![vec![0.0; horizon]; n_packs] }
    }

    pub fn from_net(net_kw: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(first) = net_kw.first() {
            if net_kw.iter().any(|r| r.len() != first.len()) {
                return Err(Error::Shape("schedule rows have different lengths".into()));
            }
        }
        Ok(Schedule { net_kw })
    }

    /// Builds a schedule from a pack-major flat vector.
    pub fn from_flat(flat: &[f64], n_packs: usize, horizon: usize) -> Self {
        assert_eq!(flat.len(), n_packs * horizon);
        Schedule { net_kw: flat.chunks(horizon.max(1)).take(n_packs).map(|c| c.to_vec()).collect() }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.net_kw.iter().flatten().copied().collect()
    }

    pub fn n_packs(&self) -> usize {
        self.net_kw.len()
    }

    pub fn horizon(&self) -> usize {
        self.net_kw.first().map_or(0, Vec::len)
    }

    pub fn net(&self, pack: usize, step: usize) -> f64 {
        self.net_kw[pack][step]
    }

    pub fn set_net(&mut self, pack: usize, step: usize, p_kw: f64) {
        self.net_kw[pack][step] = p_kw;
    }

    pub fn command(&self, pack: usize, step: usize) -> PowerCommand {
        PowerCommand::from_net(self.net_kw[pack][step])
    }

    pub fn row(&self, pack: usize) -> &[f64] {
        &self.net_kw[pack]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.net_kw
    }
}

/// Applies one step of the energy dynamics, rejecting results outside the energy bounds.
pub fn step_energy(state: &PackState, cmd: PowerCommand, spec: &PackSpec, dt_hours: f64) -> Result<PackState> {
    step_energy_at(state, cmd, spec, dt_hours, 0)
}

fn step_energy_at(
    state: &PackState,
    cmd: PowerCommand,
    spec: &PackSpec,
    dt_hours: f64,
    step: usize,
) -> Result<PackState> {
    debug_assert!(cmd.is_exclusive());
    let energy =
        state.energy_kwh + (cmd.p_charge_kw * spec.eta_charge - cmd.p_discharge_kw / spec.eta_discharge) * dt_hours;
    let b = &spec.bounds;
    if energy < b.e_min_kwh - ENERGY_TOL_KWH || energy > b.e_max_kwh + ENERGY_TOL_KWH {
        return Err(Error::BoundsViolation {
            pack: spec.id.clone(),
            step,
            energy_kwh: energy,
            min_kwh: b.e_min_kwh,
            max_kwh: b.e_max_kwh,
        });
    }
    Ok(PackState { energy_kwh: energy, ..*state })
}

/// Conversion loss in kW for one command.
pub fn power_loss(cmd: PowerCommand, spec: &PackSpec) -> f64 {
    cmd.p_charge_kw * (1.0 - spec.eta_charge) + cmd.p_discharge_kw * (1.0 / spec.eta_discharge - 1.0)
}

/// `residual[k] = sum_j net[j][k] - demand[k]`.
pub fn check_balance(schedule: &Schedule, demand_kw: &[f64]) -> Result<Vec<f64>> {
    if schedule.horizon() != demand_kw.len() && schedule.n_packs() > 0 {
        return Err(Error::Shape(format!(
            "schedule horizon {} vs demand length {}",
            schedule.horizon(),
            demand_kw.len()
        )));
    }
    Ok(demand_kw.iter().enumerate().map(|(k, d)| schedule.rows().iter().map(|r| r[k]).sum::<f64>() - d).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonTrajectory {
    /// `states[j][k]` is pack `j` before step `k`; `k = H` is the final state.
    pub states: Vec<Vec<PackState>>,
    /// `losses_kw[j][k]` is the conversion loss of pack `j` during step `k`.
    pub losses_kw: Vec<Vec<f64>>,
}

/// Applies [`step_energy`] over the whole horizon for every pack.
pub fn simulate_horizon(
    states: &[PackState],
    schedule: &Schedule,
    specs: &[&PackSpec],
    dt_hours: f64,
) -> Result<HorizonTrajectory> {
    if states.len() != specs.len() || schedule.n_packs() != specs.len() {
        return Err(Error::Shape(format!(
            "{} states, {} specs, {} schedule rows",
            states.len(),
            specs.len(),
            schedule.n_packs()
        )));
    }
    let h = schedule.horizon();
    let mut traj =
        HorizonTrajectory { states: Vec::with_capacity(specs.len()), losses_kw: Vec::with_capacity(specs.len()) };
    for (j, spec) in specs.iter().enumerate() {
        let mut row = Vec::with_capacity(h + 1);
        let mut losses = Vec::with_capacity(h);
        let mut s = states[j];
        row.push(s);
        for k in 0..h {
            let cmd = schedule.command(j, k);
            losses.push(power_loss(cmd, spec));
            s = step_energy_at(&s, cmd, spec, dt_hours, k)?;
            row.push(s);
        }
        traj.states.push(row);
        traj.losses_kw.push(losses);
    }
    Ok(traj)
}
