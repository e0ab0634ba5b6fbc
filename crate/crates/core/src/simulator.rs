//! Multi-cycle campaigns: one horizon per cycle, aging carried across cycles.
//!
//! Every cycle restarts pack energies from the template scenario, draws fresh
//! prices, allocates the horizon and advances fade and throughput. Prices are a
//! pure function of `(seed, cycle)`, so a checkpoint only needs the cycle index,
//! the pack states and the previous schedule to resume bit-identically.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{baseline_schedule, BaselineKind};
use crate::costs::{acos, CostBreakdown, CostTotals};
use crate::electrical::Schedule;
use crate::error::{Error, Result};
use crate::optimizer::evaluate::costs_of;
use crate::optimizer::{
    build_problem, seeded_rng, simulate_fleet, solve_from, FleetTrajectory, SolverDiagnostics, SolverOptions,
};
use crate::types::{soh, validate_scenario, Pack, PackState, Scenario, Violation};

const CHECKPOINT_FORMAT: &str = "slbess-campaign-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

/// Hourly electricity prices drawn from a clipped normal distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriceModel {
    pub mean: f64,
    pub std: f64,
    pub floor: f64,
    pub seed: u64,
}

impl Default for PriceModel {
    fn default() -> Self {
        PriceModel { mean: 0.15, std: 0.01, floor: 0.0, seed: 0 }
    }
}

impl PriceModel {
    pub fn fixed(mean: f64) -> Self {
        PriceModel { mean, std: 0.0, ..PriceModel::default() }
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if !(self.mean.is_finite() && self.mean >= 0.0) {
            out.push(Violation::scenario("price.mean", format!("mean must be finite and >= 0: {}", self.mean)));
        }
        if !(self.std.is_finite() && self.std >= 0.0) {
            out.push(Violation::scenario("price.std", format!("std must be finite and >= 0: {}", self.std)));
        }
        if !(self.floor.is_finite() && self.floor >= 0.0) {
            out.push(Violation::scenario("price.floor", format!("floor must be finite and >= 0: {}", self.floor)));
        }
        out
    }
}

/// Prices for one cycle. Deterministic in `(model.seed, cycle)`.
pub fn generate_prices(model: &PriceModel, horizon: usize, cycle: usize) -> Vec<f64> {
    if model.std == 0.0 {
        return vec![model.mean.max(model.floor); horizon];
    }
    let normal = Normal::new(model.mean, model.std).expect("price std must be finite and non-negative");
    let mut rng = seeded_rng(model.seed, cycle as u64);
    (0..horizon).map(|_| normal.sample(&mut rng).max(model.floor)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Allocator {
    Proposed,
    Soh,
    Capacity,
}

impl Allocator {
    pub const ALL: [Allocator; 3] = [Allocator::Proposed, Allocator::Soh, Allocator::Capacity];

    pub fn name(self) -> &'static str {
        match self {
            Allocator::Proposed => "proposed",
            Allocator::Soh => "soh",
            Allocator::Capacity => "capacity",
        }
    }
}

impl fmt::Display for Allocator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Allocator {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Allocator::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown allocator '{s}' (expected proposed, soh or capacity)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    /// Fleet, demand profile and step length. Pack energies here are the
    /// start-of-cycle energies for every cycle.
    pub template: Scenario,
    pub cycles: usize,
    pub allocator: Allocator,
    pub prices: PriceModel,
    /// Full schedules and trajectories are kept for every `record_stride`-th cycle.
    pub record_stride: usize,
    pub solver: SolverOptions,
    /// Solver starts per cycle after the first. The previous cycle's schedule
    /// is always the first of them.
    pub followup_starts: usize,
}

impl CampaignConfig {
    pub fn new(template: Scenario, allocator: Allocator, cycles: usize) -> Self {
        CampaignConfig {
            template,
            cycles,
            allocator,
            prices: PriceModel::default(),
            record_stride: 10,
            solver: SolverOptions::default(),
            followup_starts: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut v = validate_scenario(&self.template);
        v.extend(self.prices.violations());
        if self.cycles == 0 {
            v.push(Violation::scenario("cycles", "a campaign needs at least one cycle".into()));
        }
        if self.record_stride == 0 {
            v.push(Violation::scenario("record_stride", "record stride must be at least 1".into()));
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }

    fn options_for(&self, cycle: usize) -> SolverOptions {
        if cycle == 0 {
            self.solver.clone()
        } else {
            SolverOptions { multistarts: self.followup_starts.max(1), ..self.solver.clone() }
        }
    }
}

/// Result of allocating and simulating one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleOutcome {
    pub schedule: Schedule,
    pub trajectory: FleetTrajectory,
    pub costs: CostBreakdown,
    /// Present for the proposed allocator.
    pub diagnostics: Option<SolverDiagnostics>,
    pub converged: bool,
    /// Packs that reached their second-life fade limit during this cycle.
    pub retired: Vec<usize>,
}

impl CycleOutcome {
    pub fn final_states(&self) -> Vec<PackState> {
        self.trajectory.final_states()
    }
}

/// The template with the given aging states, template energies and these prices.
pub fn cycle_scenario(template: &Scenario, states: &[PackState], prices: Vec<f64>) -> Scenario {
    let mut s = template.clone();
    for (pack, state) in s.fleet.iter_mut().zip(states) {
        pack.state.q_fade = state.q_fade;
        pack.state.ah_throughput = state.ah_throughput;
    }
    s.price_per_kwh = prices;
    s
}

/// Allocates one horizon and applies it to the fleet.
pub fn run_cycle(
    scenario: &Scenario,
    allocator: Allocator,
    solver: &SolverOptions,
    warm: Option<&Schedule>,
) -> Result<CycleOutcome> {
    let (schedule, trajectory, costs, diagnostics, converged) = match allocator {
        Allocator::Proposed => {
            let problem = build_problem(scenario.clone(), solver.clone())?;
            let (sol, converged) = match solve_from(&problem, warm) {
                Ok(sol) => (sol, true),
                Err(Error::NotConverged(sol)) => (*sol, false),
                Err(e) => return Err(e),
            };
            (sol.schedule, sol.trajectory, sol.costs, Some(sol.diagnostics), converged)
        }
        Allocator::Soh | Allocator::Capacity => {
            let kind = if allocator == Allocator::Soh { BaselineKind::Soh } else { BaselineKind::Capacity };
            let schedule = baseline_schedule(kind, scenario)?;
            let trajectory = simulate_fleet(&schedule, scenario)?;
            let costs = costs_of(&trajectory, scenario);
            (schedule, trajectory, costs, None, true)
        }
    };
    let retired = scenario
        .fleet
        .iter()
        .zip(trajectory.final_states())
        .enumerate()
        .filter(|(_, (p, s))| !p.state.is_retired(&p.spec) && s.is_retired(&p.spec))
        .map(|(j, _)| j)
        .collect();
    Ok(CycleOutcome { schedule, trajectory, costs, diagnostics, converged, retired })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeSummary {
    /// Mean state of health at the end of the cycle.
    pub mean_soh: f64,
    pub costs: CostTotals,
    /// Grid-side energy moved by the type this cycle, kWh.
    pub throughput_kwh: f64,
    /// Mean cumulative grid-side energy per pack, kWh.
    pub cumulative_throughput_per_pack_kwh: f64,
}

/// Scalar summary kept for every cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    pub mean_price: f64,
    pub costs: CostTotals,
    pub throughput_kwh: f64,
    pub cumulative_cost: f64,
    /// In [`CampaignResult::type_names`] order.
    pub by_type: Vec<TypeSummary>,
    pub retired: Vec<String>,
    pub converged: bool,
    pub iterations: usize,
}

/// Full detail kept every `record_stride` cycles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleDetail {
    pub cycle: usize,
    pub prices: Vec<f64>,
    pub schedule: Schedule,
    pub trajectory: FleetTrajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub allocator: Allocator,
    pub seed: u64,
    pub type_names: Vec<String>,
    /// Mean state of health per type before the first cycle.
    pub initial_soh: Vec<f64>,
    pub records: Vec<CycleRecord>,
    pub details: Vec<CycleDetail>,
    pub final_fleet: Vec<Pack>,
    pub acos_by_type: Vec<Option<f64>>,
    pub acos_overall: Option<f64>,
}

impl CampaignResult {
    pub fn total_cost(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.cumulative_cost)
    }

    pub fn cycle_costs(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.costs.grand_total).collect()
    }

    pub fn cumulative_costs(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.cumulative_cost).collect()
    }

    pub fn type_position(&self, name: &str) -> Option<usize> {
        self.type_names.iter().position(|t| t == name)
    }
}

/// A campaign in progress. Serialisable so it can be checkpointed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Campaign {
    config: CampaignConfig,
    next_cycle: usize,
    states: Vec<PackState>,
    warm: Option<Schedule>,
    cumulative_throughput_kwh: Vec<f64>,
    records: Vec<CycleRecord>,
    details: Vec<CycleDetail>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    campaign: Campaign,
}

fn type_means(scenario: &Scenario, values: &[f64]) -> Vec<f64> {
    let names = scenario.type_names();
    let index = scenario.type_index();
    let mut sum = vec![0.0; names.len()];
    let mut count = vec![0usize; names.len()];
    for (j, &t) in index.iter().enumerate() {
        sum[t] += values[j];
        count[t] += 1;
    }
    sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect()
}

fn type_sums(scenario: &Scenario, values: &[f64]) -> Vec<f64> {
    let mut sum = vec![0.0; scenario.type_names().len()];
    for (j, &t) in scenario.type_index().iter().enumerate() {
        sum[t] += values[j];
    }
    sum
}

impl Campaign {
    pub fn new(config: CampaignConfig) -> Result<Self> {
        config.validate()?;
        let n = config.template.n_packs();
        Ok(Campaign {
            states: config.template.states(),
            config,
            next_cycle: 0,
            warm: None,
            cumulative_throughput_kwh: vec![0.0; n],
            records: Vec::new(),
            details: Vec::new(),
        })
    }

    pub fn config(&self) -> &CampaignConfig {
        &self.config
    }

    pub fn next_cycle(&self) -> usize {
        self.next_cycle
    }

    pub fn is_done(&self) -> bool {
        self.next_cycle >= self.config.cycles
    }

    pub fn states(&self) -> &[PackState] {
        &self.states
    }

    /// Runs the next cycle. Errors leave the campaign unchanged.
    pub fn step(&mut self) -> Result<&CycleRecord> {
        let cycle = self.next_cycle;
        let cfg = &self.config;
        let prices = generate_prices(&cfg.prices, cfg.template.horizon_steps, cycle);
        let scenario = cycle_scenario(&cfg.template, &self.states, prices.clone());
        let residual: f64 =
            self.states.iter().zip(&cfg.template.fleet).map(|(s, p)| s.energy_kwh - p.state.energy_kwh).sum();
        if cycle > 0 && residual.abs() > 1e-6 {
            log::debug!("cycle {cycle}: resetting {residual:.4} kWh of net stored energy");
        }

        let out = run_cycle(&scenario, cfg.allocator, &cfg.options_for(cycle), self.warm.as_ref())?;
        if !out.converged {
            log::warn!("cycle {cycle}: solver hit its iteration cap, keeping the best feasible schedule");
        }
        let dt = scenario.dt_hours;
        let moved: Vec<f64> = out.schedule.rows().iter().map(|row| row.iter().map(|p| p.abs() * dt).sum()).collect();
        for (c, m) in self.cumulative_throughput_kwh.iter_mut().zip(&moved) {
            *c += m;
        }
        let finals = out.final_states();
        let sohs: Vec<f64> = scenario.fleet.iter().zip(&finals).map(|(p, s)| soh(&p.spec, s)).collect();
        let mean_soh = type_means(&scenario, &sohs);
        let mut cost = vec![CostTotals::default(); mean_soh.len()];
        for (c, &t) in out.costs.per_pack.iter().zip(&scenario.type_index()) {
            cost[t] = cost[t].add(c);
        }
        let throughput = type_sums(&scenario, &moved);
        let cumulative = type_means(&scenario, &self.cumulative_throughput_kwh);
        let by_type = (0..mean_soh.len())
            .map(|t| TypeSummary {
                mean_soh: mean_soh[t],
                costs: cost[t],
                throughput_kwh: throughput[t],
                cumulative_throughput_per_pack_kwh: cumulative[t],
            })
            .collect();
        let retired: Vec<String> = out.retired.iter().map(|&j| scenario.fleet[j].spec.id.clone()).collect();
        for id in &retired {
            log::info!("cycle {cycle}: pack {id} reached its fade limit and is bypassed");
        }
        let previous = self.records.last().map_or(0.0, |r| r.cumulative_cost);
        let record = CycleRecord {
            cycle,
            mean_price: prices.iter().sum::<f64>() / prices.len().max(1) as f64,
            costs: out.costs.total,
            throughput_kwh: moved.iter().sum(),
            cumulative_cost: previous + out.costs.total.grand_total,
            by_type,
            retired,
            converged: out.converged,
            iterations: out.diagnostics.as_ref().map_or(0, |d| d.iterations),
        };
        if cycle.is_multiple_of(cfg.record_stride) || cycle + 1 == cfg.cycles {
            self.details.push(CycleDetail {
                cycle,
                prices,
                schedule: out.schedule.clone(),
                trajectory: out.trajectory,
            });
        }
        self.states = finals;
        self.warm = Some(out.schedule);
        self.records.push(record);
        self.next_cycle += 1;
        Ok(self.records.last().unwrap())
    }

    pub fn finish(self) -> CampaignResult {
        let template = &self.config.template;
        let type_names = template.type_names();
        let initial: Vec<f64> = template.fleet.iter().map(|p| soh(&p.spec, &p.state)).collect();
        let n_types = type_names.len();
        let mut cost = vec![0.0; n_types];
        let mut moved = vec![0.0; n_types];
        for r in &self.records {
            for (t, s) in r.by_type.iter().enumerate() {
                cost[t] += s.costs.grand_total;
                moved[t] += s.throughput_kwh;
            }
        }
        let acos_by_type = (0..n_types).map(|t| acos(cost[t], moved[t]).ok()).collect();
        let acos_overall = acos(cost.iter().sum(), moved.iter().sum()).ok();
        let final_fleet =
            template.fleet.iter().zip(&self.states).map(|(p, s)| Pack { spec: p.spec.clone(), state: *s }).collect();
        CampaignResult {
            allocator: self.config.allocator,
            seed: self.config.prices.seed,
            initial_soh: type_means(template, &initial),
            type_names,
            records: self.records,
            details: self.details,
            final_fleet,
            acos_by_type,
            acos_overall,
        }
    }

    /// Writes the campaign state as JSON, replacing the file atomically.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file =
            CheckpointFile { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, campaign: self.clone() };
        let text = serde_json::to_string(&file).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, text)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Reads a checkpoint written for exactly this configuration.
    pub fn load(path: &Path, config: &CampaignConfig) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let file: CheckpointFile =
            serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}, found {} v{}",
                path.display(),
                file.format,
                file.version
            )));
        }
        if file.campaign.config != *config {
            return Err(Error::Checkpoint(format!(
                "{} was written for a different campaign configuration",
                path.display()
            )));
        }
        Ok(file.campaign)
    }
}

pub fn run_campaign(config: CampaignConfig) -> Result<CampaignResult> {
    let mut campaign = Campaign::new(config)?;
    while !campaign.is_done() {
        let allocator = campaign.config.allocator;
        let r = campaign.step()?;
        if (r.cycle + 1) % 50 == 0 {
            log::info!("{allocator}: cycle {} cumulative ${:.2}", r.cycle + 1, r.cumulative_cost);
        }
    }
    Ok(campaign.finish())
}

/// Like [`run_campaign`], resuming from `path` if it exists and saving every `every` cycles.
pub fn run_campaign_checkpointed(config: CampaignConfig, path: &Path, every: usize) -> Result<CampaignResult> {
    let mut campaign = if path.exists() {
        let c = Campaign::load(path, &config)?;
        log::info!("resuming {} at cycle {}", c.config.allocator, c.next_cycle);
        c
    } else {
        Campaign::new(config)?
    };
    let every = every.max(1);
    while !campaign.is_done() {
        campaign.step()?;
        if campaign.next_cycle % every == 0 || campaign.is_done() {
            campaign.save(path)?;
        }
    }
    Ok(campaign.finish())
}

/// The three allocators run on the same template and price draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub proposed: CampaignResult,
    pub soh: CampaignResult,
    pub capacity: CampaignResult,
}

impl Comparison {
    pub fn run(config: &CampaignConfig) -> Result<Self> {
        let mut results: Vec<Result<CampaignResult>> = Allocator::ALL
            .par_iter()
            .map(|&allocator| run_campaign(CampaignConfig { allocator, ..config.clone() }))
            .collect();
        let capacity = results.pop().unwrap()?;
        let soh = results.pop().unwrap()?;
        let proposed = results.pop().unwrap()?;
        Ok(Comparison { proposed, soh, capacity })
    }

    pub fn get(&self, allocator: Allocator) -> &CampaignResult {
        match allocator {
            Allocator::Proposed => &self.proposed,
            Allocator::Soh => &self.soh,
            Allocator::Capacity => &self.capacity,
        }
    }

    /// Percent by which a baseline's cumulative cost exceeds the proposed one, per cycle.
    pub fn excess_pct(&self, baseline: Allocator) -> Vec<f64> {
        let base = self.get(baseline).cumulative_costs();
        let ours = self.proposed.cumulative_costs();
        base.iter().zip(&ours).map(|(b, p)| 100.0 * (b / p - 1.0)).collect()
    }

    /// Percent reduction of the proposed per-cycle cost relative to a baseline.
    pub fn reduction_pct(&self, baseline: Allocator) -> Vec<f64> {
        let base = self.get(baseline).cycle_costs();
        let ours = self.proposed.cycle_costs();
        base.iter().zip(&ours).map(|(b, p)| 100.0 * (1.0 - p / b)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::fixtures::{mixed_fleet, scenario};
    use proptest::prelude::*;

    const PROFILE: [f64; 12] =
        [-420.0, -700.0, -630.0, -350.0, 230.0, 420.0, 320.0, -420.0, -350.0, 280.0, 460.0, 370.0];

    fn small(demand_scale: f64) -> Scenario {
        scenario(mixed_fleet(1), PROFILE.iter().map(|d| d * demand_scale).collect(), 0.15)
    }

    fn quick() -> SolverOptions {
        SolverOptions { multistarts: 3, parallel: false, ..SolverOptions::default() }
    }

    fn config(allocator: Allocator, cycles: usize) -> CampaignConfig {
        CampaignConfig {
            solver: quick(),
            record_stride: 1,
            prices: PriceModel { seed: 3, ..PriceModel::default() },
            ..CampaignConfig::new(small(0.05), allocator, cycles)
        }
    }

    /// Mean of `max(X, floor)` for `X ~ N(mean, std)`, by the trapezoid rule.
    fn clipped_mean(mean: f64, std: f64, floor: f64) -> f64 {
        let steps = 200_000;
        let (lo, hi) = (mean - 12.0 * std, mean + 12.0 * std);
        let h = (hi - lo) / steps as f64;
        (0..=steps)
            .map(|i| {
                let x = lo + i as f64 * h;
                let z = (x - mean) / std;
                let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
                w * x.max(floor) * (-0.5 * z * z).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
            })
            .sum::<f64>()
            * h
    }

    #[test]
    fn zero_std_gives_constant_prices() {
        assert_eq!(generate_prices(&PriceModel::fixed(0.15), 12, 4), vec![0.15; 12]);
    }

    #[test]
    fn sample_mean_matches_clipped_normal() {
        let model = PriceModel { mean: 0.15, std: 0.1, floor: 0.0, seed: 11 };
        let draws: Vec<f64> = (0..10_000).flat_map(|c| generate_prices(&model, 10, c)).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean - clipped_mean(0.15, 0.1, 0.0)).abs() < 0.002, "{mean}");
        let narrow = PriceModel { std: 0.01, ..model };
        let draws: Vec<f64> = (0..10_000).flat_map(|c| generate_prices(&narrow, 10, c)).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean - 0.15).abs() < 0.002);
    }

    #[test]
    fn prices_depend_on_seed_and_cycle_only() {
        let m = PriceModel::default();
        assert_eq!(generate_prices(&m, 12, 5), generate_prices(&m, 12, 5));
        assert_ne!(generate_prices(&m, 12, 5), generate_prices(&m, 12, 6));
        let other = PriceModel { seed: 1, ..m.clone() };
        assert_ne!(generate_prices(&m, 12, 5), generate_prices(&other, 12, 5));
    }

    #[test]
    fn allocator_names_round_trip() {
        for a in Allocator::ALL {
            assert_eq!(a.name().parse::<Allocator>().unwrap(), a);
        }
        assert!("greedy".parse::<Allocator>().is_err());
    }

    #[test]
    fn zero_demand_cycle_costs_nothing() {
        let sc = scenario(mixed_fleet(1), vec![0.0; 4], 0.15);
        for a in Allocator::ALL {
            let out = run_cycle(&sc, a, &quick(), None).unwrap();
            assert_eq!(out.costs.total.grand_total, 0.0);
            assert_eq!(out.final_states(), sc.states());
        }
    }

    #[test]
    fn soh_drops_when_power_flows() {
        let sc = small(0.05);
        for a in Allocator::ALL {
            let out = run_cycle(&sc, a, &quick(), None).unwrap();
            for (j, (p, s)) in sc.fleet.iter().zip(out.final_states()).enumerate() {
                if out.schedule.row(j).iter().any(|v| *v != 0.0) {
                    assert!(soh(&p.spec, &s) < soh(&p.spec, &p.state));
                }
            }
        }
    }

    #[test]
    fn single_cycle_campaign_equals_run_cycle() {
        let cfg = config(Allocator::Proposed, 1);
        let result = run_campaign(cfg.clone()).unwrap();
        let prices = generate_prices(&cfg.prices, 12, 0);
        let sc = cycle_scenario(&cfg.template, &cfg.template.states(), prices);
        let out = run_cycle(&sc, Allocator::Proposed, &cfg.solver, None).unwrap();
        assert_eq!(result.records.len(), 1);
        assert_eq!(result.records[0].costs, out.costs.total);
        assert_eq!(result.details[0].schedule, out.schedule);
        let finals: Vec<PackState> = result.final_fleet.iter().map(|p| p.state).collect();
        assert_eq!(finals, out.final_states());
    }

    #[test]
    fn campaign_state_carries_over_and_sums() {
        let result = run_campaign(config(Allocator::Soh, 4)).unwrap();
        assert_eq!(result.details.len(), 4);
        for w in result.details.windows(2) {
            for j in 0..w[0].trajectory.q_fade.len() {
                assert_eq!(w[1].trajectory.q_fade[j][0], *w[0].trajectory.q_fade[j].last().unwrap());
                assert_eq!(w[1].trajectory.ah_throughput[j][0], *w[0].trajectory.ah_throughput[j].last().unwrap());
            }
        }
        let mut sum = 0.0;
        for r in &result.records {
            sum += r.costs.grand_total;
            assert_eq!(r.cumulative_cost, sum);
        }
        for t in 0..result.type_names.len() {
            let mut last = result.initial_soh[t];
            for r in &result.records {
                assert!(r.by_type[t].mean_soh <= last);
                last = r.by_type[t].mean_soh;
            }
        }
        assert!(result.acos_overall.unwrap() > 0.0);
    }

    #[test]
    fn stride_thins_details() {
        let cfg = CampaignConfig { record_stride: 2, ..config(Allocator::Capacity, 5) };
        let result = run_campaign(cfg).unwrap();
        let cycles: Vec<usize> = result.details.iter().map(|d| d.cycle).collect();
        assert_eq!(cycles, vec![0, 2, 4]);
        assert_eq!(result.records.len(), 5);
    }

    #[test]
    fn campaign_is_deterministic_and_resumable() {
        let cfg = config(Allocator::Proposed, 3);
        let whole = run_campaign(cfg.clone()).unwrap();
        assert_eq!(run_campaign(cfg.clone()).unwrap(), whole);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let mut first = Campaign::new(cfg.clone()).unwrap();
        first.step().unwrap();
        first.save(&path).unwrap();
        let resumed = run_campaign_checkpointed(cfg.clone(), &path, 1).unwrap();
        assert_eq!(resumed, whole);

        let other = CampaignConfig { cycles: 4, ..cfg };
        assert!(matches!(Campaign::load(&path, &other), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn checkpoint_version_is_checked() {
        let cfg = config(Allocator::Soh, 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        Campaign::new(cfg.clone()).unwrap().save(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap().replace("\"version\":1", "\"version\":99");
        fs::write(&path, text).unwrap();
        let err = Campaign::load(&path, &cfg).unwrap_err().to_string();
        assert!(err.contains("v99"), "{err}");
    }

    #[test]
    fn retired_pack_is_reported_and_bypassed() {
        let mut cfg = config(Allocator::Capacity, 2);
        cfg.template = scenario(mixed_fleet(2), PROFILE.iter().map(|d| d * 0.05).collect(), 0.15);
        let limit = cfg.template.fleet[0].spec.q_sl_fraction;
        cfg.template.fleet[0].state.q_fade = limit - 1e-9;
        let result = run_campaign(cfg).unwrap();
        assert_eq!(result.records[0].retired, vec![result.final_fleet[0].spec.id.clone()]);
        assert!(result.details[1].schedule.row(0).iter().all(|p| *p == 0.0));
        assert!(result.records[1].retired.is_empty());
    }

    #[test]
    fn invalid_campaigns_are_rejected() {
        assert!(matches!(Campaign::new(config(Allocator::Soh, 0)), Err(Error::Validation(_))));
        let cfg =
            CampaignConfig { prices: PriceModel { std: -1.0, ..PriceModel::default() }, ..config(Allocator::Soh, 1) };
        assert!(matches!(Campaign::new(cfg), Err(Error::Validation(_))));
    }

    #[test]
    fn proposed_dominates_baselines_each_cycle() {
        let cmp = Comparison::run(&config(Allocator::Proposed, 3)).unwrap();
        for base in [Allocator::Soh, Allocator::Capacity] {
            for (p, b) in cmp.proposed.cycle_costs().iter().zip(cmp.get(base).cycle_costs()) {
                assert!(*p <= b + 1e-9, "{p} > {b}");
            }
            assert!(cmp.excess_pct(base).iter().all(|e| *e >= 0.0));
        }
    }

    proptest! {
        #[test]
        fn prices_respect_the_floor(
            mean in 0.0f64..0.5,
            std in 0.0f64..0.3,
            floor in 0.0f64..0.2,
            seed in any::<u64>(),
            cycle in 0usize..10_000,
        ) {
            let m = PriceModel { mean, std, floor, seed };
            let p = generate_prices(&m, 24, cycle);
            prop_assert_eq!(p.len(), 24);
            prop_assert!(p.iter().all(|v| *v >= floor));
        }
    }
}
