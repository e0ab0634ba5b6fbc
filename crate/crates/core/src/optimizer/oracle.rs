//! Exhaustive grid search for tiny problems, used to check the solver.

use crate::aging::advance;
use crate::costs::{decommissioning_cost, degradation_cost};
use crate::electrical::{power_loss, step_energy, PowerCommand, Schedule};
use crate::error::{Error, Result};
use crate::types::{PackBounds, PackState, Scenario};

use super::{package, OptimizationProblem, Solution, StartOrigin, StartReport};

pub const MAX_PACKS: usize = 3;
pub const MAX_STEPS: usize = 4;
/// Upper bound on the number of complete schedules enumerated.
pub const MAX_LEAVES: f64 = 5e7;

const SNAP_KW: f64 = 1e-9;

fn admissible(b: &PackBounds, retired: bool, p: f64) -> Option<f64> {
    if retired {
        return (p.abs() <= SNAP_KW).then_some(0.0);
    }
    let m = p.abs();
    if m <= SNAP_KW {
        return Some(0.0);
    }
    let snapped = if (m - b.p_min_kw).abs() <= SNAP_KW {
        b.p_min_kw
    } else if (m - b.p_max_kw).abs() <= SNAP_KW {
        b.p_max_kw
    } else {
        m
    };
    (snapped >= b.p_min_kw && snapped <= b.p_max_kw).then(|| p.signum() * snapped)
}

/// Uniform points over `[-p_max, p_max]` plus `0`, `±p_min`, `±p_max`, kept if admissible.
fn grid(b: &PackBounds, retired: bool, resolution: usize) -> Vec<f64> {
    if retired {
        return vec![0.0];
    }
    let mut v: Vec<f64> =
        (0..resolution).map(|i| -b.p_max_kw + 2.0 * b.p_max_kw * i as f64 / (resolution - 1) as f64).collect();
    v.extend([0.0, b.p_min_kw, -b.p_min_kw, b.p_max_kw, -b.p_max_kw]);
    let mut v: Vec<f64> = v.into_iter().filter_map(|p| admissible(b, false, p)).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn special(b: &PackBounds, retired: bool) -> Vec<f64> {
    if retired {
        vec![0.0]
    } else {
        vec![0.0, b.p_min_kw, -b.p_min_kw, b.p_max_kw, -b.p_max_kw]
    }
}

/// Every admissible split of one step's demand on the grid. The last pack takes
/// the remainder; values that put it exactly on a bound are added to the grid of
/// the pack before it.
fn step_allocations(scenario: &Scenario, retired: &[bool], demand: f64, resolution: usize) -> Vec<Vec<f64>> {
    let n = scenario.n_packs();
    let bounds: Vec<&PackBounds> = scenario.fleet.iter().map(|p| &p.spec.bounds).collect();
    let last = n - 1;
    let mut out = Vec::new();
    let push_with_last = |prefix: &[f64], out: &mut Vec<Vec<f64>>| {
        let rest = demand - prefix.iter().sum::<f64>();
        if let Some(p) = admissible(bounds[last], retired[last], rest) {
            let mut v = prefix.to_vec();
            v.push(p);
            out.push(v);
        }
    };
    match n {
        1 => push_with_last(&[], &mut out),
        2 => {
            let mut first = grid(bounds[0], retired[0], resolution);
            first.extend(special(bounds[1], retired[1]).iter().map(|v| demand - v));
            first.sort_by(f64::total_cmp);
            first.dedup();
            for x0 in first {
                if let Some(x0) = admissible(bounds[0], retired[0], x0) {
                    push_with_last(&[x0], &mut out);
                }
            }
        }
        _ => {
            let g0 = grid(bounds[0], retired[0], resolution);
            let g1 = grid(bounds[1], retired[1], resolution);
            for &x0 in &g0 {
                let mut second = g1.clone();
                second.extend(special(bounds[2], retired[2]).iter().map(|v| demand - x0 - v));
                second.sort_by(f64::total_cmp);
                second.dedup();
                for x1 in second {
                    if let Some(x1) = admissible(bounds[1], retired[1], x1) {
                        push_with_last(&[x0, x1], &mut out);
                    }
                }
            }
        }
    }
    out.sort_by(|a, b| {
        a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });
    out.dedup();
    out
}

struct Search<'a> {
    scenario: &'a Scenario,
    options: Vec<Vec<Vec<f64>>>,
    path: Vec<usize>,
    best_cost: f64,
    best_path: Option<Vec<usize>>,
    leaves: usize,
}

impl Search<'_> {
    fn visit(&mut self, k: usize, states: &[PackState], partial: f64) {
        let h = self.scenario.horizon_steps;
        if k == h {
            self.leaves += 1;
            if partial < self.best_cost {
                self.best_cost = partial;
                self.best_path = Some(self.path.clone());
            }
            return;
        }
        let dt = self.scenario.dt_hours;
        let price = self.scenario.price_per_kwh[k];
        'alloc: for a in 0..self.options[k].len() {
            let mut next = Vec::with_capacity(states.len());
            let mut cost = partial;
            for (j, pack) in self.scenario.fleet.iter().enumerate() {
                let p = self.options[k][a][j];
                let cmd = PowerCommand::from_net(p);
                let Ok(s) = step_energy(&states[j], cmd, &pack.spec, dt) else {
                    continue 'alloc;
                };
                let s = advance(&pack.spec, &s, p, dt);
                cost += price * power_loss(cmd, &pack.spec) * dt
                    + degradation_cost(&pack.spec, states[j].q_fade, s.q_fade)
                    + decommissioning_cost(&pack.spec, states[j].q_fade, s.q_fade, self.scenario.decom_cost_per_lb);
                next.push(s);
            }
            // Every increment is non-negative, so a partial cost above the best is final.
            if cost >= self.best_cost {
                continue;
            }
            self.path.push(a);
            self.visit(k + 1, &next, cost);
            self.path.pop();
        }
    }
}

/// Global minimum over a grid of `grid_resolution` points per pack-step.
pub fn oracle_solve(problem: &OptimizationProblem, grid_resolution: usize) -> Result<Solution> {
    let scenario = &problem.scenario;
    let (n, h) = (scenario.n_packs(), scenario.horizon_steps);
    if n > MAX_PACKS || h > MAX_STEPS {
        return Err(Error::TooLarge(format!("{n} packs x {h} steps exceeds {MAX_PACKS} x {MAX_STEPS}")));
    }
    if grid_resolution < 2 {
        return Err(Error::TooLarge(format!("grid resolution {grid_resolution} below 2")));
    }
    let retired: Vec<bool> = scenario.fleet.iter().map(|p| p.state.is_retired(&p.spec)).collect();
    let options: Vec<Vec<Vec<f64>>> =
        scenario.demand_kw.iter().map(|&d| step_allocations(scenario, &retired, d, grid_resolution)).collect();
    let leaves: f64 = options.iter().map(|o| o.len() as f64).product();
    if leaves > MAX_LEAVES {
        return Err(Error::TooLarge(format!("{leaves:.3e} schedules exceed {MAX_LEAVES:.0e}")));
    }

    let mut search =
        Search { scenario, options, path: Vec::with_capacity(h), best_cost: f64::INFINITY, best_path: None, leaves: 0 };
    search.visit(0, &scenario.states(), 0.0);
    let Some(path) = search.best_path else {
        return Err(Error::NoFeasiblePoint("no grid schedule satisfies the energy bounds".into()));
    };
    let rows: Vec<Vec<f64>> = (0..n).map(|j| (0..h).map(|k| search.options[k][path[k]][j]).collect()).collect();
    let schedule = Schedule::from_net(rows)?;
    let cost = super::evaluate_objective(&schedule, scenario)?.total.grand_total;
    let report = StartReport {
        index: 0,
        origin: StartOrigin::Grid,
        cost: Some(cost),
        iterations: search.leaves,
        converged: true,
    };
    package(schedule, scenario, vec![report], 0, search.leaves, true)
}
