//! Ground-truth forward simulation and cost evaluation of a schedule.

use serde::{Deserialize, Serialize};

use crate::aging::{advance, pack_temp};
use crate::costs::{decommissioning_cost, degradation_cost, pack_energy_loss_cost, CostBreakdown, CostTotals};
use crate::electrical::{check_balance, simulate_horizon, Schedule, BALANCE_TOL_KW, ENERGY_TOL_KWH};
use crate::error::{Error, Result};
use crate::types::{PackState, Scenario};

/// Per-pack trajectories over one horizon. State series have `H + 1` entries,
/// per-step series have `H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetTrajectory {
    pub energy_kwh: Vec<Vec<f64>>,
    /// Second-life fade fraction.
    pub q_fade: Vec<Vec<f64>>,
    pub ah_throughput: Vec<Vec<f64>>,
    pub temp_k: Vec<Vec<f64>>,
    pub losses_kw: Vec<Vec<f64>>,
}

impl FleetTrajectory {
    pub fn final_states(&self) -> Vec<PackState> {
        (0..self.energy_kwh.len())
            .map(|j| PackState {
                energy_kwh: *self.energy_kwh[j].last().unwrap(),
                q_fade: *self.q_fade[j].last().unwrap(),
                ah_throughput: *self.ah_throughput[j].last().unwrap(),
            })
            .collect()
    }
}

fn check_shape(schedule: &Schedule, scenario: &Scenario) -> Result<()> {
    if schedule.n_packs() != scenario.n_packs() || schedule.horizon() != scenario.horizon_steps {
        return Err(Error::Shape(format!(
            "schedule is {}x{}, scenario is {}x{}",
            schedule.n_packs(),
            schedule.horizon(),
            scenario.n_packs(),
            scenario.horizon_steps
        )));
    }
    Ok(())
}

/// Applies the electrical and aging models to every pack over the horizon.
pub fn simulate_fleet(schedule: &Schedule, scenario: &Scenario) -> Result<FleetTrajectory> {
    check_shape(schedule, scenario)?;
    let specs = scenario.specs();
    let states = scenario.states();
    let electrical = simulate_horizon(&states, schedule, &specs, scenario.dt_hours)?;
    let h = scenario.horizon_steps;
    let n = scenario.n_packs();
    let mut traj = FleetTrajectory {
        energy_kwh: Vec::with_capacity(n),
        q_fade: Vec::with_capacity(n),
        ah_throughput: Vec::with_capacity(n),
        temp_k: Vec::with_capacity(n),
        losses_kw: electrical.losses_kw,
    };
    for (j, spec) in specs.iter().enumerate() {
        let mut state = states[j];
        let mut fade = Vec::with_capacity(h + 1);
        let mut ah = Vec::with_capacity(h + 1);
        let mut temp = Vec::with_capacity(h);
        fade.push(state.q_fade);
        ah.push(state.ah_throughput);
        for k in 0..h {
            let p = schedule.net(j, k);
            temp.push(pack_temp(spec, p));
            state = advance(spec, &state, p, scenario.dt_hours);
            fade.push(state.q_fade);
            ah.push(state.ah_throughput);
        }
        traj.energy_kwh.push(electrical.states[j].iter().map(|s| s.energy_kwh).collect());
        traj.q_fade.push(fade);
        traj.ah_throughput.push(ah);
        traj.temp_k.push(temp);
    }
    Ok(traj)
}

/// Costs of a simulated trajectory.
pub fn costs_of(traj: &FleetTrajectory, scenario: &Scenario) -> CostBreakdown {
    let per_pack = scenario
        .fleet
        .iter()
        .enumerate()
        .map(|(j, pack)| {
            let fade = &traj.q_fade[j];
            let (f0, f1) = (fade[0], *fade.last().unwrap());
            CostTotals::new(
                pack_energy_loss_cost(&traj.losses_kw[j], &scenario.price_per_kwh, scenario.dt_hours),
                degradation_cost(&pack.spec, f0, f1),
                decommissioning_cost(&pack.spec, f0, f1, scenario.decom_cost_per_lb),
            )
        })
        .collect();
    CostBreakdown::from_packs(per_pack)
}

/// Total energy-loss, degradation and decommissioning cost of a schedule.
pub fn evaluate_objective(schedule: &Schedule, scenario: &Scenario) -> Result<CostBreakdown> {
    let traj = simulate_fleet(schedule, scenario)?;
    Ok(costs_of(&traj, scenario))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Feasibility {
    pub max_balance_residual_kw: f64,
    /// Largest distance outside the energy bounds (0 when inside).
    pub max_energy_violation_kwh: f64,
    /// Largest distance of any power from `{0} ∪ ±[p_min, p_max]`, retired packs pinned to 0.
    pub max_power_violation_kw: f64,
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        self.max_balance_residual_kw <= BALANCE_TOL_KW
            && self.max_energy_violation_kwh <= ENERGY_TOL_KWH
            && self.max_power_violation_kw <= 1e-9
    }
}

/// Measures every constraint of a schedule without failing on violations.
pub fn feasibility(schedule: &Schedule, scenario: &Scenario) -> Result<Feasibility> {
    check_shape(schedule, scenario)?;
    let residual = check_balance(schedule, &scenario.demand_kw)?;
    let mut out =
        Feasibility { max_balance_residual_kw: residual.iter().fold(0.0, |m, r| m.max(r.abs())), ..Default::default() };
    for (j, pack) in scenario.fleet.iter().enumerate() {
        let b = &pack.spec.bounds;
        let retired = pack.state.is_retired(&pack.spec);
        let mut e = pack.state.energy_kwh;
        for k in 0..scenario.horizon_steps {
            let p = schedule.net(j, k);
            let m = p.abs();
            let pv = if retired {
                m
            } else if m == 0.0 {
                0.0
            } else if m < b.p_min_kw {
                (b.p_min_kw - m).min(m)
            } else {
                (m - b.p_max_kw).max(0.0)
            };
            out.max_power_violation_kw = out.max_power_violation_kw.max(pv);
            let cmd = schedule.command(j, k);
            e += (cmd.p_charge_kw * pack.spec.eta_charge - cmd.p_discharge_kw / pack.spec.eta_discharge)
                * scenario.dt_hours;
            let ev = (b.e_min_kwh - e).max(e - b.e_max_kwh).max(0.0);
            out.max_energy_violation_kwh = out.max_energy_violation_kwh.max(ev);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::fixtures::{mixed_fleet, pack, scenario};
    use crate::types::Pack;

    #[test]
    fn idle_with_zero_demand_costs_nothing() {
        let s = scenario(mixed_fleet(1), vec![0.0; 4], 0.15);
        let c = evaluate_objective(&Schedule::idle(4, 4), &s).unwrap();
        assert_eq!(c.total.grand_total, 0.0);
        assert!(feasibility(&Schedule::idle(4, 4), &s).unwrap().is_feasible());
    }

    #[test]
    fn single_pack_cost_matches_hand_evaluation() {
        let spec = pack(1, 1);
        let s = scenario(vec![Pack { spec: spec.clone(), state: PackState::new(12.0) }], vec![-20.0, 10.0], 0.15);
        let sched = Schedule::from_net(vec![vec![-20.0, 10.0]]).unwrap();
        let c = evaluate_objective(&sched, &s).unwrap();
        let loss = 0.15 * (20.0 * 0.15 + 10.0 * (1.0 / 0.85 - 1.0));
        assert!((c.total.energy_loss - loss).abs() < 1e-12);

        // Fade by hand: two Euler steps from the first-life fade of 15 %.
        let a = &spec.aging;
        let step = |q: f64, p: f64| {
            let c = p / 60.0;
            let t = 298.0 + 1.421 * c * c;
            let b = a.b_poly[0] + a.b_poly[1] * c + a.b_poly[2] * c * c;
            let rate = b.powf(1.0 / a.zeta)
                * a.zeta
                * (-(a.activation_energy_j + a.beta * c) / (a.zeta * a.gas_constant * t)).exp();
            q + p * 1000.0 / 380.0 * rate * q.powf((a.zeta - 1.0) / a.zeta)
        };
        let q_end = step(step(15.0, 20.0), 10.0);
        let fade = (q_end - 15.0) / 100.0;
        assert!((c.total.degradation - 5400.0 / 0.15 * fade).abs() < 1e-9);
        assert!((c.total.decommissioning - 60.0 * 4.42 * 1.75 / 0.15 * fade).abs() < 1e-9);
    }

    #[test]
    fn repeated_evaluation_is_identical() {
        let s = scenario(mixed_fleet(1), vec![-30.0, 20.0], 0.15);
        let sched =
            Schedule::from_net(vec![vec![-10.0, 6.0], vec![-10.0, 6.0], vec![-6.0, 4.0], vec![-4.0, 4.0]]).unwrap();
        let a = evaluate_objective(&sched, &s).unwrap();
        let b = evaluate_objective(&sched, &s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn feasibility_flags_semicontinuity_and_energy() {
        let s = scenario(mixed_fleet(1), vec![1.0, 0.0], 0.15);
        let sched = Schedule::from_net(vec![vec![1.0, 0.0], vec![0.0; 2], vec![0.0; 2], vec![0.0; 2]]).unwrap();
        let f = feasibility(&sched, &s).unwrap();
        assert!(f.max_power_violation_kw > 0.9);
        assert!(!f.is_feasible());
    }
}
