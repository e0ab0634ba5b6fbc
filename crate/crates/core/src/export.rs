//! CSV and summary output, with a SHA-256 manifest of everything written.
//!
//! CSV numbers carry 6 significant digits. Files are produced in a fixed order
//! from deterministic inputs, so re-exporting a result reproduces every hash.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::aging::{qfade_closed_form, second_life_throughput, throughput_for_fade};
use crate::costs::{economy_index, CostTotals};
use crate::electrical::Schedule;
use crate::error::{Error, Result};
use crate::optimizer::FleetTrajectory;
use crate::simulator::{Allocator, CampaignResult, Comparison};
use crate::thermal::{equilibrate, fit_temp_polynomial, temp_at_c};
use crate::types::{PackSpec, Scenario};

/// `x` rounded to 6 significant digits, printed without an exponent.
pub fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let rounded: f64 = format!("{x:.5e}").parse().unwrap();
    format!("{rounded}")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Files written under one output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Manifest { root: root.to_path_buf(), entries: Vec::new() })
    }

    pub fn write(&mut self, rel: &str, contents: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, contents)?;
        self.entries.push(ManifestEntry {
            path: rel.to_string(),
            sha256: hex::encode(Sha256::digest(contents)),
            bytes: contents.len(),
        });
        Ok(())
    }

    /// Writes `manifest.txt` as `<sha256>  <path>` lines.
    pub fn finish(&self) -> Result<PathBuf> {
        let text: String = self.entries.iter().map(|e| format!("{}  {}\n", e.sha256, e.path)).collect();
        let path = self.root.join("manifest.txt");
        fs::write(&path, text)?;
        Ok(path)
    }
}

/// A CSV table with a fixed header.
struct Table {
    rows: Vec<Vec<String>>,
    width: usize,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Table { rows: vec![header.iter().map(|h| h.to_string()).collect()], width: header.len() }
    }

    fn row(&mut self, cells: Vec<String>) {
        debug_assert_eq!(cells.len(), self.width);
        self.rows.push(cells);
    }

    fn bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.write_record(r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
        w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }
}

fn n(x: f64) -> String {
    sig6(x)
}

fn cost_cells(c: &CostTotals) -> Vec<String> {
    vec![n(c.energy_loss), n(c.degradation), n(c.decommissioning), n(c.grand_total)]
}

/// One row per pack-step: power, then energy, temperature and fade after the step.
pub fn schedule_csv(scenario: &Scenario, schedule: &Schedule, traj: &FleetTrajectory) -> Result<Vec<u8>> {
    let mut t = Table::new(&["pack", "type", "step", "power_kw", "energy_kwh", "temp_k", "q_fade"]);
    for (j, pack) in scenario.fleet.iter().enumerate() {
        for k in 0..schedule.horizon() {
            t.row(vec![
                pack.spec.id.clone(),
                pack.spec.type_name.clone(),
                k.to_string(),
                n(schedule.net(j, k)),
                n(traj.energy_kwh[j][k + 1]),
                n(traj.temp_k[j][k]),
                n(traj.q_fade[j][k + 1]),
            ]);
        }
    }
    t.bytes()
}

/// One row per cycle.
pub fn campaign_csv(result: &CampaignResult) -> Result<Vec<u8>> {
    let mut header: Vec<String> = [
        "cycle",
        "mean_price",
        "energy_loss",
        "degradation",
        "decommissioning",
        "total",
        "cumulative",
        "throughput_kwh",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for name in &result.type_names {
        header.push(format!("soh_{name}"));
        header.push(format!("throughput_{name}"));
    }
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut t = Table::new(&refs);
    for r in &result.records {
        let mut cells = vec![r.cycle.to_string(), n(r.mean_price)];
        cells.extend(cost_cells(&r.costs));
        cells.push(n(r.cumulative_cost));
        cells.push(n(r.throughput_kwh));
        for s in &r.by_type {
            cells.push(n(s.mean_soh));
            cells.push(n(s.throughput_kwh));
        }
        t.row(cells);
    }
    t.bytes()
}

#[derive(Serialize)]
struct TypeLine {
    name: String,
    packs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    acos: Option<f64>,
    final_mean_soh: f64,
    throughput_per_pack_kwh: f64,
    energy_loss: f64,
    degradation: f64,
    decommissioning: f64,
    total: f64,
}

#[derive(Serialize)]
struct Summary {
    allocator: String,
    seed: u64,
    cycles: usize,
    total_cost: f64,
    energy_loss: f64,
    degradation: f64,
    decommissioning: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    acos: Option<f64>,
    retired_packs: Vec<String>,
    #[serde(rename = "type")]
    types: Vec<TypeLine>,
}

/// Cost breakdown and per-type results as TOML.
pub fn summary_toml(result: &CampaignResult) -> Result<String> {
    let mut sum = CostTotals::default();
    let mut by_type = vec![CostTotals::default(); result.type_names.len()];
    for r in &result.records {
        sum = sum.add(&r.costs);
        for (t, s) in r.by_type.iter().enumerate() {
            by_type[t] = by_type[t].add(&s.costs);
        }
    }
    let last = result.records.last();
    let types = result
        .type_names
        .iter()
        .enumerate()
        .map(|(t, name)| TypeLine {
            name: name.clone(),
            packs: result.final_fleet.iter().filter(|p| p.spec.type_name == *name).count(),
            acos: result.acos_by_type[t],
            final_mean_soh: last.map_or(result.initial_soh[t], |r| r.by_type[t].mean_soh),
            throughput_per_pack_kwh: last.map_or(0.0, |r| r.by_type[t].cumulative_throughput_per_pack_kwh),
            energy_loss: by_type[t].energy_loss,
            degradation: by_type[t].degradation,
            decommissioning: by_type[t].decommissioning,
            total: by_type[t].grand_total,
        })
        .collect();
    let summary = Summary {
        allocator: result.allocator.to_string(),
        seed: result.seed,
        cycles: result.records.len(),
        total_cost: result.total_cost(),
        energy_loss: sum.energy_loss,
        degradation: sum.degradation,
        decommissioning: sum.decommissioning,
        acos: result.acos_overall,
        retired_packs: result.records.iter().flat_map(|r| r.retired.clone()).collect(),
        types,
    };
    toml::to_string(&summary).map_err(|e| Error::Io(std::io::Error::other(e)))
}

fn demand_csv(scenario: &Scenario) -> Result<Vec<u8>> {
    let mut t = Table::new(&["step", "demand_kw"]);
    for (k, d) in scenario.demand_kw.iter().enumerate() {
        t.row(vec![k.to_string(), n(*d)]);
    }
    t.bytes()
}

fn power_energy_csv(result: &CampaignResult) -> Result<Vec<u8>> {
    let mut t = Table::new(&["cycle", "pack", "type", "step", "power_kw", "energy_kwh"]);
    for d in &result.details {
        for (j, pack) in result.final_fleet.iter().enumerate() {
            for k in 0..d.schedule.horizon() {
                t.row(vec![
                    d.cycle.to_string(),
                    pack.spec.id.clone(),
                    pack.spec.type_name.clone(),
                    k.to_string(),
                    n(d.schedule.net(j, k)),
                    n(d.trajectory.energy_kwh[j][k + 1]),
                ]);
            }
        }
    }
    t.bytes()
}

/// Per-type series over cycles; `cycle` 0 is the state before the first cycle.
fn type_series_csv(result: &CampaignResult, initial: &[f64], pick: impl Fn(usize, usize) -> f64) -> Result<Vec<u8>> {
    let mut header = vec!["cycle".to_string()];
    header.extend(result.type_names.iter().cloned());
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut t = Table::new(&refs);
    let mut first = vec!["0".to_string()];
    first.extend(initial.iter().map(|v| n(*v)));
    t.row(first);
    for (i, r) in result.records.iter().enumerate() {
        let mut cells = vec![(r.cycle + 1).to_string()];
        cells.extend((0..result.type_names.len()).map(|ty| n(pick(i, ty))));
        t.row(cells);
    }
    t.bytes()
}

/// Writes one campaign's files under `prefix` (empty for the output root).
fn campaign_files(m: &mut Manifest, prefix: &str, result: &CampaignResult, template: &Scenario) -> Result<()> {
    let p = |name: &str| if prefix.is_empty() { name.to_string() } else { format!("{prefix}/{name}") };
    if let Some(d) = result.details.first() {
        let sc = Scenario { price_per_kwh: d.prices.clone(), ..template.clone() };
        m.write(&p("schedule.csv"), &schedule_csv(&sc, &d.schedule, &d.trajectory)?)?;
    }
    m.write(&p("campaign.csv"), &campaign_csv(result)?)?;
    m.write(&p("summary.toml"), summary_toml(result)?.as_bytes())?;
    m.write(&p("fig6_demand.csv"), &demand_csv(template)?)?;
    m.write(&p("fig7_power_energy.csv"), &power_energy_csv(result)?)?;
    let zeros = vec![0.0; result.type_names.len()];
    m.write(
        &p("fig8_throughput.csv"),
        &type_series_csv(result, &zeros, |i, t| result.records[i].by_type[t].cumulative_throughput_per_pack_kwh)?,
    )?;
    m.write(
        &p("fig9_soh.csv"),
        &type_series_csv(result, &result.initial_soh, |i, t| result.records[i].by_type[t].mean_soh)?,
    )?;
    Ok(())
}

pub fn export_campaign(result: &CampaignResult, template: &Scenario, out_dir: &Path) -> Result<Manifest> {
    let mut m = Manifest::new(out_dir)?;
    campaign_files(&mut m, "", result, template)?;
    m.finish()?;
    Ok(m)
}

/// Per-allocator subdirectories plus the cross-allocator figures.
pub fn export_comparison(cmp: &Comparison, template: &Scenario, out_dir: &Path) -> Result<Manifest> {
    let mut m = Manifest::new(out_dir)?;
    for a in Allocator::ALL {
        campaign_files(&mut m, a.name(), cmp.get(a), template)?;
    }

    let mut t = Table::new(&["allocator", "energy_loss", "degradation", "decommissioning", "total", "reduction_pct"]);
    let ours = cmp.proposed.records.first().map_or(0.0, |r| r.costs.grand_total);
    for a in Allocator::ALL {
        if let Some(r) = cmp.get(a).records.first() {
            let mut cells = vec![a.to_string()];
            cells.extend(cost_cells(&r.costs));
            cells.push(n(100.0 * (1.0 - ours / r.costs.grand_total)));
            t.row(cells);
        }
    }
    m.write("fig10_first_cycle_costs.csv", &t.bytes()?)?;

    let mut t = Table::new(&["type", "energy_loss", "degradation", "decommissioning", "total"]);
    if let Some(r) = cmp.proposed.records.first() {
        for (name, s) in cmp.proposed.type_names.iter().zip(&r.by_type) {
            let mut cells = vec![name.clone()];
            cells.extend(cost_cells(&s.costs));
            t.row(cells);
        }
    }
    m.write("fig11_first_cycle_by_type.csv", &t.bytes()?)?;

    let mut t = Table::new(&[
        "cycle",
        "reduction_vs_soh_pct",
        "reduction_vs_capacity_pct",
        "cumulative_excess_soh_pct",
        "cumulative_excess_capacity_pct",
    ]);
    let (rs, rc) = (cmp.reduction_pct(Allocator::Soh), cmp.reduction_pct(Allocator::Capacity));
    let (es, ec) = (cmp.excess_pct(Allocator::Soh), cmp.excess_pct(Allocator::Capacity));
    for i in 0..rs.len() {
        t.row(vec![(i + 1).to_string(), n(rs[i]), n(rc[i]), n(es[i]), n(ec[i])]);
    }
    m.write("fig12_reductions.csv", &t.bytes()?)?;

    let mut t = Table::new(&["cycle", "proposed", "soh", "capacity"]);
    let cum: Vec<Vec<f64>> = Allocator::ALL.iter().map(|a| cmp.get(*a).cumulative_costs()).collect();
    for i in 0..cum[0].len() {
        t.row(vec![(i + 1).to_string(), n(cum[0][i]), n(cum[1][i]), n(cum[2][i])]);
    }
    m.write("fig13_cumulative_cost.csv", &t.bytes()?)?;

    m.write("fig14_acos.csv", &acos_csv(cmp)?)?;
    m.finish()?;
    Ok(m)
}

/// Average cost of storage per allocator and type, plus an `all` row.
pub fn acos_csv(cmp: &Comparison) -> Result<Vec<u8>> {
    let mut t = Table::new(&["allocator", "type", "acos"]);
    let cell = |v: Option<f64>| v.map_or_else(String::new, n);
    for a in Allocator::ALL {
        let r = cmp.get(a);
        for (name, v) in r.type_names.iter().zip(&r.acos_by_type) {
            t.row(vec![a.to_string(), name.clone(), cell(*v)]);
        }
        t.row(vec![a.to_string(), "all".into(), cell(r.acos_overall)]);
    }
    t.bytes()
}

/// One representative spec per type name, in first-appearance order.
pub fn type_specs(scenario: &Scenario) -> Vec<&PackSpec> {
    scenario
        .type_names()
        .iter()
        .map(|name| &scenario.fleet.iter().find(|p| p.spec.type_name == *name).unwrap().spec)
        .collect()
}

pub const CASE_STUDY_C_RATES: [f64; 4] = [0.5, 1.0, 2.0, 3.0];

/// Thermal and aging curves for every pack type.
pub fn export_case_study(scenario: &Scenario, out_dir: &Path) -> Result<Manifest> {
    let mut m = Manifest::new(out_dir)?;
    let specs = type_specs(scenario);

    let mut t = Table::new(&["type", "t_env_k", "c_rate", "ode_k", "fit_k"]);
    let c_grid: Vec<f64> = (0..=40).map(|i| i as f64 * 0.1).collect();
    for spec in &specs {
        for offset in [-10.0, 0.0, 10.0] {
            let mut params = spec.thermal.clone();
            params.t_env_k += offset;
            let fit = fit_temp_polynomial(&params, &c_grid)?;
            for &c in &c_grid {
                let current = crate::thermal::cell_current(c, &params);
                let (ode, _) = equilibrate(params.t_env_k, current, &params, 1.0, 1e-10, 1_000_000)?;
                t.row(vec![spec.type_name.clone(), n(params.t_env_k), n(c), n(ode), n(temp_at_c(&fit.coeffs, c))]);
            }
        }
    }
    m.write("fig3_temperature.csv", &t.bytes()?)?;

    let mut t = Table::new(&["type", "c_rate", "throughput_ah", "fade_pct"]);
    for spec in &specs {
        let start = 1.0 - spec.soh_initial;
        let poly = spec.thermal.temp_poly;
        for c in CASE_STUDY_C_RATES {
            let temp = temp_at_c(&poly, c);
            let z0 = throughput_for_fade(&spec.aging, c, temp, 100.0 * start);
            let span = second_life_throughput(&spec.aging, c, |c| temp_at_c(&poly, c), start, spec.q_sl_fraction);
            for i in 0..=50 {
                let z = span * i as f64 / 50.0;
                let fade = if i == 0 { 0.0 } else { qfade_closed_form(&spec.aging, c, temp, z0 + z) - 100.0 * start };
                t.row(vec![spec.type_name.clone(), n(c), n(z), n(fade)]);
            }
        }
    }
    m.write("fig4_fade.csv", &t.bytes()?)?;

    let mut t = Table::new(&["type", "c_rate", "throughput_ah"]);
    for spec in &specs {
        let poly = spec.thermal.temp_poly;
        for i in 0..=25 {
            let c = 0.5 + 0.1 * i as f64;
            let z = second_life_throughput(
                &spec.aging,
                c,
                |c| temp_at_c(&poly, c),
                1.0 - spec.soh_initial,
                spec.q_sl_fraction,
            );
            t.row(vec![spec.type_name.clone(), n(c), n(z)]);
        }
    }
    m.write("fig5_throughput.csv", &t.bytes()?)?;

    m.write("economy_index.csv", &economy_index_csv(scenario)?)?;
    m.finish()?;
    Ok(m)
}

/// Economy index per type at the case-study C-rates.
pub fn economy_index_csv(scenario: &Scenario) -> Result<Vec<u8>> {
    let mut t = Table::new(&["type", "c_rate", "economy_index"]);
    for spec in type_specs(scenario) {
        for c in CASE_STUDY_C_RATES {
            t.row(vec![spec.type_name.clone(), n(c), n(economy_index(spec, scenario.decom_cost_per_lb, c))]);
        }
    }
    t.bytes()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::SolverOptions;
    use crate::simulator::{run_campaign, CampaignConfig, PriceModel};
    use crate::types::fixtures::{mixed_fleet, scenario};

    fn small_result() -> (CampaignResult, Scenario) {
        let sc = scenario(mixed_fleet(1), vec![-20.0, -10.0, 12.0, 8.0], 0.15);
        let cfg = CampaignConfig {
            solver: SolverOptions { multistarts: 2, parallel: false, ..SolverOptions::default() },
            record_stride: 1,
            prices: PriceModel::fixed(0.15),
            ..CampaignConfig::new(sc.clone(), Allocator::Soh, 1)
        };
        (run_campaign(cfg).unwrap(), sc)
    }

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(183.256789), "183.257");
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(-0.0001234567), "-0.000123457");
        assert_eq!(sig6(1234567.0), "1234570");
        assert_eq!(sig6(0.15), "0.15");
        assert_eq!(sig6(2.0), "2");
    }

    #[test]
    fn single_cycle_gives_one_row_and_pinned_header() {
        let (r, _) = small_result();
        let text = String::from_utf8(campaign_csv(&r).unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            lines[0],
            "cycle,mean_price,energy_loss,degradation,decommissioning,total,cumulative,throughput_kwh,\
             soh_type1,throughput_type1,soh_type2,throughput_type2,soh_type3,throughput_type3,soh_type4,throughput_type4"
        );
        assert!(lines[1].starts_with("0,0.15,"));
    }

    #[test]
    fn schedule_csv_golden_rows() {
        let (r, sc) = small_result();
        let d = &r.details[0];
        let text = String::from_utf8(schedule_csv(&sc, &d.schedule, &d.trajectory).unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "pack,type,step,power_kw,energy_kwh,temp_k,q_fade");
        assert_eq!(lines.len(), 1 + 4 * 4);
        // SoH weights 0.85, 0.8, 0.85, 0.8 split -20 kW; pack 1 takes 0.85/3.3 of it.
        let first: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(&first[..3], &["type1-1", "type1", "0"]);
        assert_eq!(first[3], sig6(-20.0 * 0.85 / 3.3));
        assert_eq!(first[4], sig6(12.0 + 20.0 * 0.85 / 3.3 * 0.85));
    }

    #[test]
    fn reexport_reproduces_hashes() {
        let (r, sc) = small_result();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = export_campaign(&r, &sc, a.path()).unwrap();
        let mb = export_campaign(&r, &sc, b.path()).unwrap();
        let strip = |m: &Manifest| m.entries.clone();
        assert_eq!(strip(&ma), strip(&mb));
        assert!(ma.entries.iter().any(|e| e.path == "fig8_throughput.csv"));
        assert!(ma.entries.iter().any(|e| e.path == "fig9_soh.csv"));
        let listed = fs::read_to_string(a.path().join("manifest.txt")).unwrap();
        let bytes = fs::read(a.path().join("campaign.csv")).unwrap();
        assert!(listed.contains(&format!("{}  campaign.csv", hex::encode(Sha256::digest(&bytes)))));
    }

    #[test]
    fn summary_parses_back() {
        let (r, _) = small_result();
        let text = summary_toml(&r).unwrap();
        let v: toml::Table = toml::from_str(&text).unwrap();
        assert_eq!(v["allocator"].as_str(), Some("soh"));
        assert_eq!(v["cycles"].as_integer(), Some(1));
        assert_eq!(v["type"].as_array().unwrap().len(), 4);
        assert_eq!(v["total_cost"].as_float(), Some(r.total_cost()));
    }

    #[test]
    fn case_study_files() {
        let sc = scenario(mixed_fleet(1), vec![1.0], 0.15);
        let dir = tempfile::tempdir().unwrap();
        let m = export_case_study(&sc, dir.path()).unwrap();
        let names: Vec<&str> = m.entries.iter().map(|e| e.path.as_str()).collect();
        assert_eq!(names, ["fig3_temperature.csv", "fig4_fade.csv", "fig5_throughput.csv", "economy_index.csv"]);
        let fig4 = fs::read_to_string(dir.path().join("fig4_fade.csv")).unwrap();
        let last = fig4.lines().rfind(|l| l.starts_with("type1,0.5,")).unwrap();
        let fade: f64 = last.split(',').nth(3).unwrap().parse().unwrap();
        assert!((fade - 15.0).abs() < 1e-3, "{fade}");
    }
}
