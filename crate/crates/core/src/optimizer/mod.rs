//! Horizon power allocation minimising energy-loss, degradation and
//! decommissioning cost.
//!
//! Each pack-step is one signed power (positive discharges), so charge and
//! discharge can never overlap. Energy and fade are simulated forward from the
//! schedule. A local search has three phases:
//!
//! 1. minimise a smoothed relaxation (`|p| ~ sqrt(p^2 + d^2) - d`, no minimum power)
//!    with projected Newton steps, energy bounds in an augmented Lagrangian,
//!    and exact projection of every step onto its balance constraint;
//! 2. fix each pack-step to idle, charging or discharging and re-solve the exact
//!    objective inside `±[p_min, p_max]`;
//! 3. switch off pack-steps stuck at their minimum power while that lowers cost.
//!
//! Several starts run (warm start, both baseline rules, seeded random splits) and
//! the cheapest feasible schedule under [`evaluate_objective`] wins; the baseline
//! schedules themselves are also candidates.

pub mod evaluate;
mod local;
mod newton;
mod objective;
pub mod oracle;
mod projection;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{baseline_schedule, BaselineKind};
use crate::costs::CostBreakdown;
use crate::electrical::Schedule;
use crate::error::{Error, Result};
use crate::types::{validate_scenario, Scenario};

pub use evaluate::{evaluate_objective, feasibility, simulate_fleet, Feasibility, FleetTrajectory};
pub use oracle::oracle_solve;

use objective::{Magnitude, Model};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub multistarts: usize,
    pub seed: u64,
    /// Augmented Lagrangian outer iterations per phase.
    pub max_outer: usize,
    /// Newton iterations per outer iteration.
    pub max_inner: usize,
    pub inner_tol: f64,
    pub smoothing_kw: f64,
    /// Energy bounds are tightened by this much inside the solver.
    pub energy_margin_kwh: f64,
    pub penalty_start: f64,
    pub improvement_rounds: usize,
    /// Problems with at most this many variables also try every single mode change.
    pub mode_search_max_vars: usize,
    pub parallel: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            multistarts: 8,
            seed: 0,
            max_outer: 10,
            max_inner: 200,
            inner_tol: 1e-7,
            smoothing_kw: 1e-3,
            energy_margin_kwh: 1e-3,
            penalty_start: 1.0,
            improvement_rounds: 3,
            mode_search_max_vars: 16,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizationProblem {
    pub scenario: Scenario,
    pub options: SolverOptions,
    model: Model,
}

impl OptimizationProblem {
    pub fn n_packs(&self) -> usize {
        self.model.n
    }

    pub fn horizon(&self) -> usize {
        self.model.h
    }

    /// Number of signed power variables.
    pub fn n_variables(&self) -> usize {
        self.model.n * self.model.h
    }

    /// Smoothed objective and its gradient at a schedule.
    pub fn smoothed_objective(&self, schedule: &Schedule) -> (f64, Schedule) {
        let x = schedule.to_flat();
        let mut g = vec![0.0; x.len()];
        let f = self.model.cost(&x, Magnitude::Smooth(self.options.smoothing_kw), Some(&mut g));
        (f, Schedule::from_flat(&g, self.model.n, self.model.h))
    }
}

/// Validates the scenario and checks that each step's demand is within the
/// combined power limit of the packs still in service.
pub fn build_problem(scenario: Scenario, options: SolverOptions) -> Result<OptimizationProblem> {
    let violations = validate_scenario(&scenario);
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    let limit: f64 =
        scenario.fleet.iter().filter(|p| !p.state.is_retired(&p.spec)).map(|p| p.spec.bounds.p_max_kw).sum();
    for (step, &d) in scenario.demand_kw.iter().enumerate() {
        if d.abs() > limit * (1.0 + 1e-12) {
            return Err(Error::InfeasibleDemand { step, demand_kw: d, limit_kw: limit });
        }
    }
    let model = Model::from_scenario(&scenario);
    Ok(OptimizationProblem { scenario, options, model })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartOrigin {
    WarmStart,
    Capacity,
    Soh,
    Random,
    /// A baseline schedule kept as-is.
    BaselineSchedule,
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartReport {
    pub index: usize,
    pub origin: StartOrigin,
    /// Exact cost of the start's result, `None` if it ended infeasible.
    pub cost: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub iterations: usize,
    pub max_balance_residual_kw: f64,
    pub max_energy_violation_kwh: f64,
    pub converged: bool,
    pub starts: Vec<StartReport>,
    pub best_start: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub schedule: Schedule,
    pub trajectory: FleetTrajectory,
    pub costs: CostBreakdown,
    pub diagnostics: SolverDiagnostics,
}

/// Builds a complete [`Solution`] for a feasible schedule.
pub(crate) fn package(
    schedule: Schedule,
    scenario: &Scenario,
    starts: Vec<StartReport>,
    best_start: usize,
    iterations: usize,
    converged: bool,
) -> Result<Solution> {
    let trajectory = simulate_fleet(&schedule, scenario)?;
    let costs = evaluate::costs_of(&trajectory, scenario);
    let f = feasibility(&schedule, scenario)?;
    Ok(Solution {
        schedule,
        trajectory,
        costs,
        diagnostics: SolverDiagnostics {
            iterations,
            max_balance_residual_kw: f.max_balance_residual_kw,
            max_energy_violation_kwh: f.max_energy_violation_kwh,
            converged,
            starts,
            best_start,
        },
    })
}

pub fn solve(problem: &OptimizationProblem) -> Result<Solution> {
    solve_from(problem, None)
}

fn random_start(model: &Model, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (n, h) = (model.n, model.h);
    let mut x = vec![0.0; n * h];
    for k in 0..h {
        let weights: Vec<f64> = model
            .packs
            .iter()
            .map(|p| if p.retired { 0.0 } else { p.capacity * rng.random_range(0.05..1.0) })
            .collect();
        let total: f64 = weights.iter().sum();
        if total > 0.0 {
            for j in 0..n {
                x[j * h + k] = model.demand[k] * weights[j] / total;
            }
        }
    }
    x
}

fn proportional_start(model: &Model, kind: BaselineKind, scenario: &Scenario) -> Vec<f64> {
    let weights = kind.weights(&scenario.fleet);
    let total: f64 = weights.iter().sum();
    let (n, h) = (model.n, model.h);
    let mut x = vec![0.0; n * h];
    if total > 0.0 {
        for j in 0..n {
            for k in 0..h {
                x[j * h + k] = model.demand[k] * weights[j] / total;
            }
        }
    }
    x
}

/// Solves the problem, optionally seeding the first start with `warm`.
pub fn solve_from(problem: &OptimizationProblem, warm: Option<&Schedule>) -> Result<Solution> {
    let model = &problem.model;
    let scenario = &problem.scenario;
    let opts = &problem.options;
    let (n, h) = (model.n, model.h);

    // Baseline schedules are both starts and candidates.
    let baselines: Vec<(BaselineKind, Option<Schedule>)> = [BaselineKind::Capacity, BaselineKind::Soh]
        .into_iter()
        .map(|kind| {
            let s = baseline_schedule(kind, scenario)
                .ok()
                .filter(|s| feasibility(s, scenario).is_ok_and(|f| f.is_feasible()));
            (kind, s)
        })
        .collect();
    let warm = warm.filter(|w| w.n_packs() == n && w.horizon() == h);

    // Each start records whether it is already a feasible schedule.
    let mut starts: Vec<(StartOrigin, Vec<f64>, bool)> = Vec::new();
    if let Some(w) = warm {
        starts.push((StartOrigin::WarmStart, w.to_flat(), false));
    }
    for (kind, sched) in &baselines {
        let origin = match kind {
            BaselineKind::Capacity => StartOrigin::Capacity,
            BaselineKind::Soh => StartOrigin::Soh,
        };
        let (x, feasible) = match sched {
            Some(s) => (s.to_flat(), true),
            None => (proportional_start(model, *kind, scenario), false),
        };
        starts.push((origin, x, feasible));
    }
    let wanted = opts.multistarts.max(1);
    let mut stream = 0u64;
    while starts.len() < wanted {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(stream);
        stream += 1;
        starts.push((StartOrigin::Random, random_start(model, &mut rng), false));
    }
    starts.truncate(wanted);

    let run = |(origin, x0, feasible): &(StartOrigin, Vec<f64>, bool)| {
        let skip = *origin == StartOrigin::WarmStart;
        local::local_search(model, x0, skip, opts).or_else(|| {
            // A feasible start that the relaxation led astray is refined in place.
            (*feasible && !skip).then(|| local::local_search(model, x0, true, opts)).flatten()
        })
    };
    let results: Vec<Option<local::LocalResult>> =
        if opts.parallel { starts.par_iter().map(run).collect() } else { starts.iter().map(run).collect() };

    let mut reports = Vec::new();
    let mut candidates: Vec<(f64, usize, Schedule)> = Vec::new();
    let mut total_iterations = 0;
    let mut any_converged = false;
    for (index, ((origin, _, _), result)) in starts.iter().zip(&results).enumerate() {
        let mut report = StartReport { index, origin: *origin, cost: None, iterations: 0, converged: false };
        if let Some(r) = result {
            report.iterations = r.iterations;
            report.converged = r.converged;
            total_iterations += r.iterations;
            let sched = Schedule::from_flat(&r.x, n, h);
            if feasibility(&sched, scenario)?.is_feasible() {
                let cost = evaluate_objective(&sched, scenario)?.total.grand_total;
                report.cost = Some(cost);
                any_converged |= r.converged;
                candidates.push((cost, index, sched));
            }
        }
        reports.push(report);
    }
    let mut extra: Vec<Schedule> = baselines.into_iter().filter_map(|(_, s)| s).collect();
    if let Some(w) = warm {
        if feasibility(w, scenario)?.is_feasible() {
            extra.push(w.clone());
        }
    }
    for sched in extra {
        let index = reports.len();
        let cost = evaluate_objective(&sched, scenario)?.total.grand_total;
        reports.push(StartReport {
            index,
            origin: StartOrigin::BaselineSchedule,
            cost: Some(cost),
            iterations: 0,
            converged: true,
        });
        candidates.push((cost, index, sched));
    }

    let Some((_, best_index, best)) = candidates.into_iter().min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
    else {
        return Err(Error::NoFeasiblePoint(format!(
            "all {} starts ended infeasible and no baseline schedule exists",
            starts.len()
        )));
    };
    let solution = package(best, scenario, reports, best_index, total_iterations, any_converged)?;
    if !any_converged {
        return Err(Error::NotConverged(Box::new(solution)));
    }
    Ok(solution)
}

/// ChaCha stream for a `(seed, stream)` pair.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests;
