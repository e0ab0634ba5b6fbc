//! Proportional power-allocation heuristics used as comparison points.
//!
//! Demand is split in proportion to a per-pack weight. Shares that break a pack's
//! power or energy limits are clamped and the remainder is re-split among the
//! packs that are still free, until nothing moves.

use serde::{Deserialize, Serialize};

use crate::electrical::{PowerCommand, Schedule};
use crate::error::{Error, Result};
use crate::types::{soh, Pack, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Soh,
    Capacity,
}

impl BaselineKind {
    pub fn weights(self, fleet: &[Pack]) -> Vec<f64> {
        fleet
            .iter()
            .map(|p| {
                if p.state.is_retired(&p.spec) {
                    0.0
                } else {
                    match self {
                        BaselineKind::Soh => soh(&p.spec, &p.state),
                        BaselineKind::Capacity => p.spec.capacity_kwh,
                    }
                }
            })
            .collect()
    }
}

/// Largest power magnitude pack `p` can deliver (or absorb) this step.
fn headroom_kw(p: &Pack, discharge: bool, dt_hours: f64) -> f64 {
    let b = &p.spec.bounds;
    let energy_limited = if discharge {
        (p.state.energy_kwh - b.e_min_kwh) * p.spec.eta_discharge / dt_hours
    } else {
        (b.e_max_kwh - p.state.energy_kwh) / (p.spec.eta_charge * dt_hours)
    };
    b.p_max_kw.min(energy_limited.max(0.0))
}

#[derive(Clone, Copy, PartialEq)]
enum Slot {
    Free,
    Fixed(f64),
    Off,
}

/// Splits `total >= 0` by weight within `{0} ∪ [min_j, cap_j]`.
fn split(weights: &[f64], min: &[f64], cap: &[f64], total: f64) -> Option<Vec<f64>> {
    let n = weights.len();
    let mut off: Vec<bool> = (0..n).map(|j| weights[j] <= 0.0 || cap[j] < min[j] || cap[j] <= 0.0).collect();
    loop {
        let mut slots: Vec<Slot> = (0..n).map(|j| if off[j] { Slot::Off } else { Slot::Free }).collect();
        let mut values = vec![0.0; n];
        loop {
            let fixed: f64 = slots.iter().map(|s| if let Slot::Fixed(v) = s { *v } else { 0.0 }).sum();
            let w: f64 = (0..n).filter(|&j| slots[j] == Slot::Free).map(|j| weights[j]).sum();
            if w <= 0.0 {
                break;
            }
            let rest = total - fixed;
            let mut changed = false;
            for j in 0..n {
                if slots[j] == Slot::Free {
                    values[j] = weights[j] / w * rest;
                }
            }
            for j in 0..n {
                if slots[j] == Slot::Free && values[j] > cap[j] {
                    slots[j] = Slot::Fixed(cap[j]);
                    changed = true;
                }
            }
            if !changed {
                for j in 0..n {
                    if slots[j] == Slot::Free && values[j] < min[j] {
                        slots[j] = Slot::Fixed(min[j]);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        for j in 0..n {
            match slots[j] {
                Slot::Fixed(v) => values[j] = v,
                Slot::Off => values[j] = 0.0,
                Slot::Free => {}
            }
        }
        let sum: f64 = values.iter().sum();
        let tol = 1e-9 * total.max(1.0);
        if (sum - total).abs() <= tol {
            // Push rounding drift onto a pack with room.
            let drift = total - sum;
            if drift != 0.0 {
                if let Some(j) = (0..n)
                    .find(|&j| !off[j] && values[j] + drift >= min[j] && values[j] + drift <= cap[j] && values[j] > 0.0)
                {
                    values[j] += drift;
                }
            }
            return Some(values);
        }
        if sum < total {
            return None;
        }
        // Minimum-power clamps overshoot: switch off the lightest pack pinned at its minimum.
        let victim = (0..n)
            .filter(|&j| matches!(slots[j], Slot::Fixed(v) if v == min[j]))
            .min_by(|&a, &b| weights[a].total_cmp(&weights[b]).then(b.cmp(&a)))?;
        off[victim] = true;
    }
}

/// Splits one step's demand by `weights`, honouring power, energy and minimum-power limits.
pub fn allocate_weighted(fleet: &[Pack], weights: &[f64], demand_kw: f64, dt_hours: f64) -> Result<Vec<f64>> {
    allocate_at(fleet, weights, demand_kw, dt_hours, 0)
}

fn allocate_at(fleet: &[Pack], weights: &[f64], demand_kw: f64, dt_hours: f64, step: usize) -> Result<Vec<f64>> {
    if demand_kw == 0.0 {
        return Ok(vec![0.0; fleet.len()]);
    }
    let discharge = demand_kw > 0.0;
    let caps: Vec<f64> = fleet.iter().map(|p| headroom_kw(p, discharge, dt_hours)).collect();
    let mins: Vec<f64> = fleet.iter().map(|p| p.spec.bounds.p_min_kw).collect();
    let total = demand_kw.abs();
    match split(weights, &mins, &caps, total) {
        Some(v) => Ok(v.into_iter().map(|m| if discharge { m } else { -m }).collect()),
        None => Err(Error::InfeasibleDemand {
            step,
            demand_kw,
            limit_kw: (0..fleet.len()).filter(|&j| weights[j] > 0.0 && caps[j] >= mins[j]).map(|j| caps[j]).sum(),
        }),
    }
}

/// One step of the SoH-proportional rule.
pub fn allocate_soh(fleet: &[Pack], demand_kw: f64, dt_hours: f64) -> Result<Vec<f64>> {
    allocate_weighted(fleet, &BaselineKind::Soh.weights(fleet), demand_kw, dt_hours)
}

/// One step of the capacity-proportional rule.
pub fn allocate_capacity(fleet: &[Pack], demand_kw: f64, dt_hours: f64) -> Result<Vec<f64>> {
    allocate_weighted(fleet, &BaselineKind::Capacity.weights(fleet), demand_kw, dt_hours)
}

/// Applies a rule step by step over the horizon. Weights are frozen at the
/// scenario's starting states; energies are updated between steps.
pub fn baseline_schedule(kind: BaselineKind, scenario: &Scenario) -> Result<Schedule> {
    let weights = kind.weights(&scenario.fleet);
    let mut fleet = scenario.fleet.clone();
    let mut rows = vec![Vec::with_capacity(scenario.horizon_steps); fleet.len()];
    for (k, &demand) in scenario.demand_kw.iter().enumerate() {
        let alloc = allocate_at(&fleet, &weights, demand, scenario.dt_hours, k)?;
        for (j, p) in alloc.iter().enumerate() {
            let cmd = PowerCommand::from_net(*p);
            let pack = &mut fleet[j];
            pack.state.energy_kwh += (cmd.p_charge_kw * pack.spec.eta_charge
                - cmd.p_discharge_kw / pack.spec.eta_discharge)
                * scenario.dt_hours;
            rows[j].push(*p);
        }
    }
    Schedule::from_net(rows)
}
