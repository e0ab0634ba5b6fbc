//! Scenario configuration files.
//!
//! A configuration is TOML. Pack types are declared once with a count and
//! expanded into packs named `<type>-<index>`; aging and thermal parameter sets
//! may be given inline or by name from the top-level `[aging.*]` and
//! `[thermal.*]` tables. See `docs/config.md` for the grammar.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::error::{Error, Result};
use crate::optimizer::SolverOptions;
use crate::simulator::{Allocator, CampaignConfig, PriceModel};
use crate::types::{validate_scenario, AgingParams, Pack, PackBounds, PackSpec, PackState, Scenario, ThermalParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum Params<T> {
    Named(String),
    Inline(T),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPackType {
    name: String,
    count: usize,
    capacity_kwh: f64,
    nominal_voltage_v: f64,
    eta_charge: f64,
    eta_discharge: f64,
    capital_cost_per_kwh: f64,
    soh_initial: f64,
    q_sl_fraction: f64,
    mass_per_kwh: f64,
    p_min_kw: f64,
    p_max_kw: f64,
    e_min_kwh: f64,
    e_max_kwh: f64,
    initial_energy_kwh: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    q_fade: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    ah_throughput: f64,
    aging: Params<AgingParams>,
    thermal: Params<ThermalParams>,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    dt_hours: f64,
    decom_cost_per_lb: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    demand_kw: Option<Vec<f64>>,
    /// CSV file with a `demand_kw` column, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    demand_csv: Option<String>,
    /// Explicit prices; otherwise every step uses the price model's mean.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    price_per_kwh: Option<Vec<f64>>,
}

/// Campaign defaults; command-line flags override them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignSettings {
    pub cycles: usize,
    pub record_stride: usize,
    pub followup_starts: usize,
}

impl Default for CampaignSettings {
    fn default() -> Self {
        CampaignSettings { cycles: 1, record_stride: 10, followup_starts: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    scenario: RawScenario,
    #[serde(default)]
    prices: PriceModel,
    #[serde(default)]
    solver: SolverOptions,
    #[serde(default)]
    campaign: CampaignSettings,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    aging: BTreeMap<String, AgingParams>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    thermal: BTreeMap<String, ThermalParams>,
    pack_type: Vec<Spanned<RawPackType>>,
}

/// Everything a configuration file describes.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub scenario: Scenario,
    pub prices: PriceModel,
    pub solver: SolverOptions,
    pub campaign: CampaignSettings,
}

impl Config {
    pub fn campaign_config(&self, allocator: Allocator) -> CampaignConfig {
        CampaignConfig {
            template: self.scenario.clone(),
            cycles: self.campaign.cycles,
            allocator,
            prices: self.prices.clone(),
            record_stride: self.campaign.record_stride,
            solver: self.solver.clone(),
            followup_starts: self.campaign.followup_starts,
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn parse_error(path: &str, line: Option<usize>, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_string(), line, message: message.into() }
}

fn resolve<T: Clone>(p: &Params<T>, table: &BTreeMap<String, T>, kind: &str, path: &str, line: usize) -> Result<T> {
    match p {
        Params::Inline(v) => Ok(v.clone()),
        Params::Named(name) => table
            .get(name)
            .cloned()
            .ok_or_else(|| parse_error(path, Some(line), format!("unknown {kind} parameter set '{name}'"))),
    }
}

fn read_demand_csv(file: &Path, label: &str) -> Result<Vec<f64>> {
    let mut reader = csv::Reader::from_path(file)
        .map_err(|e| parse_error(label, None, format!("cannot read {}: {e}", file.display())))?;
    let headers = reader.headers().map_err(|e| parse_error(label, Some(1), e.to_string()))?.clone();
    let col = headers
        .iter()
        .position(|h| h.trim() == "demand_kw")
        .ok_or_else(|| parse_error(label, Some(1), "missing 'demand_kw' column"))?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_error(label, Some(line), e.to_string()))?;
        let field = rec.get(col).unwrap_or("").trim();
        let v: f64 = field
            .parse()
            .map_err(|_| parse_error(label, Some(line), format!("demand_kw '{field}' is not a number")))?;
        out.push(v);
    }
    Ok(out)
}

/// Parses configuration text. Relative file references resolve against `base_dir`.
pub fn parse_config(text: &str, label: &str, base_dir: &Path) -> Result<Config> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| line_of(text, s.start));
        parse_error(label, line, e.message().trim().to_string())
    })?;

    let demand = match (&raw.scenario.demand_kw, &raw.scenario.demand_csv) {
        (Some(d), None) => d.clone(),
        (None, Some(file)) => {
            let path = base_dir.join(file);
            read_demand_csv(&path, &path.display().to_string())?
        }
        (Some(_), Some(_)) => {
            return Err(parse_error(label, None, "give either scenario.demand_kw or scenario.demand_csv, not both"))
        }
        (None, None) => return Err(parse_error(label, None, "scenario needs demand_kw or demand_csv")),
    };
    let h = demand.len();
    let prices = raw.scenario.price_per_kwh.clone().unwrap_or_else(|| vec![raw.prices.mean; h]);

    let mut fleet = Vec::new();
    let mut next_index: BTreeMap<String, usize> = BTreeMap::new();
    for block in &raw.pack_type {
        let line = line_of(text, block.span().start);
        let t = block.get_ref();
        let aging = resolve(&t.aging, &raw.aging, "aging", label, line)?;
        let thermal = resolve(&t.thermal, &raw.thermal, "thermal", label, line)?;
        let first = next_index.entry(t.name.clone()).or_insert(1);
        for i in 0..t.count {
            let spec = PackSpec {
                id: format!("{}-{}", t.name, *first + i),
                type_name: t.name.clone(),
                capacity_kwh: t.capacity_kwh,
                nominal_voltage_v: t.nominal_voltage_v,
                eta_charge: t.eta_charge,
                eta_discharge: t.eta_discharge,
                capital_cost_per_kwh: t.capital_cost_per_kwh,
                soh_initial: t.soh_initial,
                q_sl_fraction: t.q_sl_fraction,
                mass_per_kwh: t.mass_per_kwh,
                aging: aging.clone(),
                thermal: thermal.clone(),
                bounds: PackBounds {
                    p_min_kw: t.p_min_kw,
                    p_max_kw: t.p_max_kw,
                    e_min_kwh: t.e_min_kwh,
                    e_max_kwh: t.e_max_kwh,
                },
            };
            let state =
                PackState { energy_kwh: t.initial_energy_kwh, q_fade: t.q_fade, ah_throughput: t.ah_throughput };
            fleet.push(Pack { spec, state });
        }
        *first += t.count;
    }

    let scenario = Scenario {
        fleet,
        demand_kw: demand,
        price_per_kwh: prices,
        dt_hours: raw.scenario.dt_hours,
        horizon_steps: h,
        decom_cost_per_lb: raw.scenario.decom_cost_per_lb,
    };
    let mut violations = validate_scenario(&scenario);
    violations.extend(raw.prices.violations());
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    Ok(Config { scenario, prices: raw.prices, solver: raw.solver, campaign: raw.campaign })
}

pub fn load_config(path: &Path) -> Result<Config> {
    let text = fs::read_to_string(path)
        .map_err(|e| parse_error(&path.display().to_string(), None, format!("cannot read file: {e}")))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, &path.display().to_string(), base)
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    load_config(path).map(|c| c.scenario)
}

fn same_block(a: &Pack, b: &Pack) -> bool {
    let strip = |p: &Pack| PackSpec { id: String::new(), ..p.spec.clone() };
    a.state == b.state && strip(a) == strip(b)
}

/// Writes a configuration that loads back to `scenario`. Runs of consecutive
/// packs with identical parameters and state become one block; pack ids are
/// regenerated as `<type>-<index>`.
pub fn export_config(config: &Config) -> Result<String> {
    let sc = &config.scenario;
    let mut blocks: Vec<Spanned<RawPackType>> = Vec::new();
    let mut start = 0;
    while start < sc.fleet.len() {
        let mut end = start + 1;
        while end < sc.fleet.len() && same_block(&sc.fleet[start], &sc.fleet[end]) {
            end += 1;
        }
        let p = &sc.fleet[start];
        let s = &p.spec;
        blocks.push(Spanned::new(
            0..0,
            RawPackType {
                name: s.type_name.clone(),
                count: end - start,
                capacity_kwh: s.capacity_kwh,
                nominal_voltage_v: s.nominal_voltage_v,
                eta_charge: s.eta_charge,
                eta_discharge: s.eta_discharge,
                capital_cost_per_kwh: s.capital_cost_per_kwh,
                soh_initial: s.soh_initial,
                q_sl_fraction: s.q_sl_fraction,
                mass_per_kwh: s.mass_per_kwh,
                p_min_kw: s.bounds.p_min_kw,
                p_max_kw: s.bounds.p_max_kw,
                e_min_kwh: s.bounds.e_min_kwh,
                e_max_kwh: s.bounds.e_max_kwh,
                initial_energy_kwh: p.state.energy_kwh,
                q_fade: p.state.q_fade,
                ah_throughput: p.state.ah_throughput,
                aging: Params::Inline(s.aging.clone()),
                thermal: Params::Inline(s.thermal.clone()),
            },
        ));
        start = end;
    }
    let constant = sc.price_per_kwh.iter().all(|p| *p == config.prices.mean);
    let raw = RawConfig {
        scenario: RawScenario {
            dt_hours: sc.dt_hours,
            decom_cost_per_lb: sc.decom_cost_per_lb,
            demand_kw: Some(sc.demand_kw.clone()),
            demand_csv: None,
            price_per_kwh: (!constant).then(|| sc.price_per_kwh.clone()),
        },
        prices: config.prices.clone(),
        solver: config.solver.clone(),
        campaign: config.campaign.clone(),
        aging: BTreeMap::new(),
        thermal: BTreeMap::new(),
        pack_type: blocks,
    };
    toml::to_string(&raw).map_err(|e| Error::Parse { path: "<export>".into(), line: None, message: e.to_string() })
}

/// [`export_config`] with default price, solver and campaign settings.
pub fn export_scenario(scenario: &Scenario) -> Result<String> {
    let mean = scenario.price_per_kwh.first().copied().unwrap_or(0.15);
    export_config(&Config {
        scenario: scenario.clone(),
        prices: PriceModel { mean, ..PriceModel::default() },
        solver: SolverOptions::default(),
        campaign: CampaignSettings::default(),
    })
}
