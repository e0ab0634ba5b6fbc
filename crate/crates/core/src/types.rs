//! Domain types shared by every module.
//!
//! Units: power kW, energy kWh, time h, temperature K, throughput Ah, money $.
//! `PackState::q_fade` is a fraction of original capacity (0.05 = 5 %); the aging
//! model works in percent and converts at its boundary.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sign applied to the Arrhenius exponent `(E_a + beta*C)/(R*T)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExponentSign {
    #[default]
    Negative,
    Positive,
}

impl ExponentSign {
    pub fn value(self) -> f64 {
        match self {
            ExponentSign::Negative => -1.0,
            ExponentSign::Positive => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgingParams {
    pub activation_energy_j: f64,
    pub beta: f64,
    pub zeta: f64,
    pub gas_constant: f64,
    /// `B(C) = b0 + b1*C + b2*C^2`.
    pub b_poly: [f64; 3],
    #[serde(default)]
    pub exponent: ExponentSign,
}

impl AgingParams {
    /// Smallest value of `B(C)` over `[0, c_max]`.
    pub fn min_b(&self, c_max: f64) -> f64 {
        let [b0, b1, b2] = self.b_poly;
        let eval = |c: f64| b0 + b1 * c + b2 * c * c;
        let mut lo = eval(0.0).min(eval(c_max));
        if b2 > 0.0 {
            let vertex = -b1 / (2.0 * b2);
            if vertex > 0.0 && vertex < c_max {
                lo = lo.min(eval(vertex));
            }
        }
        lo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalParams {
    pub mass_kg: f64,
    pub specific_heat: f64,
    pub internal_resistance_ohm: f64,
    pub heat_transfer_coeff: f64,
    pub surface_area_m2: f64,
    /// Cell capacity used to turn a C-rate into a cell current.
    pub cell_capacity_ah: f64,
    /// `T(C) = a1 + a2*C + a3*C^2` in kelvin.
    pub temp_poly: [f64; 3],
    pub t_env_k: f64,
}

impl ThermalParams {
    /// Convective resistance `1/(h*A)` in K/W.
    pub fn r_conv(&self) -> f64 {
        1.0 / (self.heat_transfer_coeff * self.surface_area_m2)
    }

    /// Thermal time constant `m*c*R_conv` in seconds.
    pub fn time_constant_s(&self) -> f64 {
        self.mass_kg * self.specific_heat * self.r_conv()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PackBounds {
    pub p_min_kw: f64,
    pub p_max_kw: f64,
    pub e_min_kwh: f64,
    pub e_max_kwh: f64,
}

impl PackBounds {
    /// Whether a signed power lies in `{0} ∪ ±[p_min, p_max]` (with a small slack).
    pub fn admits(&self, p_kw: f64, tol: f64) -> bool {
        let m = p_kw.abs();
        m == 0.0 || (m >= self.p_min_kw - tol && m <= self.p_max_kw + tol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackSpec {
    pub id: String,
    pub type_name: String,
    pub capacity_kwh: f64,
    pub nominal_voltage_v: f64,
    pub eta_charge: f64,
    pub eta_discharge: f64,
    pub capital_cost_per_kwh: f64,
    pub soh_initial: f64,
    pub q_sl_fraction: f64,
    pub mass_per_kwh: f64,
    pub aging: AgingParams,
    pub thermal: ThermalParams,
    pub bounds: PackBounds,
}

impl PackSpec {
    pub fn capital_cost(&self) -> f64 {
        self.capital_cost_per_kwh * self.capacity_kwh
    }

    pub fn mass_lb(&self) -> f64 {
        self.mass_per_kwh * self.capacity_kwh
    }

    pub fn c_rate(&self, p_kw: f64) -> f64 {
        p_kw.abs() / self.capacity_kwh
    }

    pub fn round_trip_efficiency(&self) -> f64 {
        self.eta_charge * self.eta_discharge
    }

    /// Largest C-rate the pack can be commanded to.
    pub fn c_max(&self) -> f64 {
        self.bounds.p_max_kw / self.capacity_kwh
    }

    /// Fade fraction at which the pack leaves service.
    pub fn retirement_fade(&self) -> f64 {
        self.q_sl_fraction
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |field: &str, message: String| {
            out.push(Violation::pack(&self.id, field, message));
        };
        if self.id.trim().is_empty() {
            push("id", "empty identifier".into());
        }
        if !(self.eta_charge > 0.0 && self.eta_charge < 1.0) {
            push("eta_charge", format!("eta_charge out of (0,1): {}", self.eta_charge));
        }
        if !(self.eta_discharge > 0.0 && self.eta_discharge < 1.0) {
            push("eta_discharge", format!("eta_discharge out of (0,1): {}", self.eta_discharge));
        }
        for (field, v) in [
            ("capacity_kwh", self.capacity_kwh),
            ("nominal_voltage_v", self.nominal_voltage_v),
            ("mass_per_kwh", self.mass_per_kwh),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                push(field, format!("{field} must be positive: {v}"));
            }
        }
        if !(self.capital_cost_per_kwh >= 0.0 && self.capital_cost_per_kwh.is_finite()) {
            push("capital_cost_per_kwh", format!("capital cost must be non-negative: {}", self.capital_cost_per_kwh));
        }
        if !(self.soh_initial > 0.0 && self.soh_initial <= 1.0) {
            push("soh_initial", format!("soh_initial out of (0,1]: {}", self.soh_initial));
        }
        let remaining = 1.0 - self.soh_initial;
        if !(self.q_sl_fraction > 0.0 && self.q_sl_fraction <= remaining + 1e-12) {
            push(
                "q_sl_fraction",
                format!("q_sl_fraction {} must lie in (0, 1 - soh_initial = {remaining}]", self.q_sl_fraction),
            );
        }

        let b = &self.bounds;
        if !(b.p_min_kw >= 0.0 && b.p_min_kw < b.p_max_kw && b.p_max_kw.is_finite()) {
            push("bounds.power", format!("need 0 <= p_min < p_max, got [{}, {}]", b.p_min_kw, b.p_max_kw));
        }
        if !(b.e_min_kwh >= 0.0 && b.e_min_kwh < b.e_max_kwh && b.e_max_kwh <= self.capacity_kwh) {
            push(
                "bounds.energy",
                format!(
                    "need 0 <= e_min < e_max <= capacity ({}), got [{}, {}]",
                    self.capacity_kwh, b.e_min_kwh, b.e_max_kwh
                ),
            );
        }

        let a = &self.aging;
        if !(a.zeta > 0.0 && a.zeta.is_finite()) {
            push("aging.zeta", format!("zeta must be positive: {}", a.zeta));
        }
        if !(a.gas_constant > 0.0) {
            push("aging.gas_constant", format!("gas constant must be positive: {}", a.gas_constant));
        }
        if self.capacity_kwh > 0.0 && b.p_max_kw.is_finite() {
            let min_b = a.min_b(self.c_max().max(0.0));
            if !(min_b > 0.0) {
                push("aging.b_poly", format!("B(C) must stay positive on [0, {:.3}], minimum {min_b}", self.c_max()));
            }
        }

        let t = &self.thermal;
        for (field, v) in [
            ("thermal.mass_kg", t.mass_kg),
            ("thermal.specific_heat", t.specific_heat),
            ("thermal.internal_resistance_ohm", t.internal_resistance_ohm),
            ("thermal.heat_transfer_coeff", t.heat_transfer_coeff),
            ("thermal.surface_area_m2", t.surface_area_m2),
            ("thermal.cell_capacity_ah", t.cell_capacity_ah),
            ("thermal.t_env_k", t.t_env_k),
            ("thermal.temp_poly[0]", t.temp_poly[0]),
            ("thermal.temp_poly[2]", t.temp_poly[2]),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                push(field, format!("{field} must be positive: {v}"));
            }
        }
        if (t.temp_poly[0] - t.t_env_k).abs() > 1e-9 {
            push(
                "thermal.temp_poly",
                format!("temperature at C=0 ({}) must equal t_env_k ({})", t.temp_poly[0], t.t_env_k),
            );
        }
        out
    }

    /// Returns the spec unchanged if it satisfies every invariant.
    pub fn checked(self) -> Result<Self> {
        let v = self.violations();
        if v.is_empty() {
            Ok(self)
        } else {
            Err(Error::Validation(v))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PackState {
    pub energy_kwh: f64,
    /// Second-life fade, fraction of original capacity.
    pub q_fade: f64,
    pub ah_throughput: f64,
}

impl PackState {
    pub fn new(energy_kwh: f64) -> Self {
        PackState { energy_kwh, q_fade: 0.0, ah_throughput: 0.0 }
    }

    pub fn violations(&self, spec: &PackSpec) -> Vec<Violation> {
        let mut out = Vec::new();
        let b = &spec.bounds;
        if !(self.energy_kwh >= b.e_min_kwh - 1e-9 && self.energy_kwh <= b.e_max_kwh + 1e-9) {
            out.push(Violation::pack(
                &spec.id,
                "energy_kwh",
                format!("initial energy {} outside [{}, {}]", self.energy_kwh, b.e_min_kwh, b.e_max_kwh),
            ));
        }
        if !(self.q_fade >= 0.0 && self.q_fade.is_finite()) {
            out.push(Violation::pack(&spec.id, "q_fade", format!("q_fade must be >= 0: {}", self.q_fade)));
        }
        if !(self.ah_throughput >= 0.0 && self.ah_throughput.is_finite()) {
            out.push(Violation::pack(
                &spec.id,
                "ah_throughput",
                format!("ah_throughput must be >= 0: {}", self.ah_throughput),
            ));
        }
        out
    }

    pub fn is_retired(&self, spec: &PackSpec) -> bool {
        self.q_fade >= spec.retirement_fade()
    }
}

/// State of health: remaining capacity as a fraction of original capacity.
pub fn soh(spec: &PackSpec, state: &PackState) -> f64 {
    spec.soh_initial - state.q_fade
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pack {
    pub spec: PackSpec,
    pub state: PackState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub fleet: Vec<Pack>,
    /// Positive = fleet discharges to the grid.
    pub demand_kw: Vec<f64>,
    pub price_per_kwh: Vec<f64>,
    pub dt_hours: f64,
    pub horizon_steps: usize,
    pub decom_cost_per_lb: f64,
}

impl Scenario {
    pub fn n_packs(&self) -> usize {
        self.fleet.len()
    }

    pub fn specs(&self) -> Vec<&PackSpec> {
        self.fleet.iter().map(|p| &p.spec).collect()
    }

    pub fn states(&self) -> Vec<PackState> {
        self.fleet.iter().map(|p| p.state).collect()
    }

    /// Distinct type names in first-appearance order.
    pub fn type_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for p in &self.fleet {
            if !names.contains(&p.spec.type_name) {
                names.push(p.spec.type_name.clone());
            }
        }
        names
    }

    /// Index into [`Scenario::type_names`] for every pack.
    pub fn type_index(&self) -> Vec<usize> {
        let names = self.type_names();
        self.fleet.iter().map(|p| names.iter().position(|n| *n == p.spec.type_name).unwrap()).collect()
    }

    pub fn checked(self) -> Result<Self> {
        let v = validate_scenario(&self);
        if v.is_empty() {
            Ok(self)
        } else {
            Err(Error::Validation(v))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub pack: Option<String>,
    pub field: String,
    pub message: String,
}

impl Violation {
    pub fn pack(id: &str, field: &str, message: String) -> Self {
        Violation { pack: Some(id.to_string()), field: field.to_string(), message }
    }

    pub fn scenario(field: &str, message: String) -> Self {
        Violation { pack: None, field: field.to_string(), message }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.pack {
            Some(id) => write!(f, "pack {id}, {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

/// Every invariant violation in the scenario. Empty means valid.
pub fn validate_scenario(scenario: &Scenario) -> Vec<Violation> {
    let mut out = Vec::new();
    if scenario.fleet.is_empty() {
        out.push(Violation::scenario("fleet", "fleet is empty".into()));
    }
    let h = scenario.horizon_steps;
    if h == 0 {
        out.push(Violation::scenario("horizon_steps", "horizon must be at least one step".into()));
    }
    if scenario.demand_kw.len() != h {
        out.push(Violation::scenario(
            "demand_kw",
            format!("demand series length mismatch: {} entries for H={h}", scenario.demand_kw.len()),
        ));
    }
    if scenario.price_per_kwh.len() != h {
        out.push(Violation::scenario(
            "price_per_kwh",
            format!("price series length mismatch: {} entries for H={h}", scenario.price_per_kwh.len()),
        ));
    }
    if let Some(k) = scenario.demand_kw.iter().position(|d| !d.is_finite()) {
        out.push(Violation::scenario("demand_kw", format!("non-finite demand at step {k}")));
    }
    if let Some(k) = scenario.price_per_kwh.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
        out.push(Violation::scenario("price_per_kwh", format!("price at step {k} must be finite and non-negative")));
    }
    if !(scenario.dt_hours > 0.0 && scenario.dt_hours.is_finite()) {
        out.push(Violation::scenario("dt_hours", format!("dt_hours must be positive: {}", scenario.dt_hours)));
    }
    if !(scenario.decom_cost_per_lb >= 0.0 && scenario.decom_cost_per_lb.is_finite()) {
        out.push(Violation::scenario(
            "decom_cost_per_lb",
            format!("decommissioning cost must be non-negative: {}", scenario.decom_cost_per_lb),
        ));
    }
    let mut seen = HashSet::new();
    for pack in &scenario.fleet {
        if !seen.insert(pack.spec.id.as_str()) {
            out.push(Violation::pack(&pack.spec.id, "id", "duplicate pack id".into()));
        }
        out.extend(pack.spec.violations());
        out.extend(pack.state.violations(&pack.spec));
    }
    out
}
