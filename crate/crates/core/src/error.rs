use thiserror::Error;

use crate::optimizer::Solution;
use crate::types::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("pack {pack} at step {step}: energy {energy_kwh:.9} kWh outside [{min_kwh}, {max_kwh}]")]
    BoundsViolation { pack: String, step: usize, energy_kwh: f64, min_kwh: f64, max_kwh: f64 },

    #[error("demand {demand_kw} kW at step {step} cannot be served (fleet limit {limit_kw} kW)")]
    InfeasibleDemand { step: usize, demand_kw: f64, limit_kw: f64 },

    #[error("no feasible schedule found: {0}")]
    NoFeasiblePoint(String),

    #[error("solver reached its iteration cap (best cost so far ${:.4})", .0.costs.total.grand_total)]
    NotConverged(Box<Solution>),

    #[error("problem too large for exhaustive search: {0}")]
    TooLarge(String),

    #[error("no energy was moved, cost per kWh is undefined")]
    ZeroThroughput,

    #[error("pre-exponential factor B({c_rate}) = {value} is not positive")]
    NegativeB { c_rate: f64, value: f64 },

    #[error("thermal step of {dt_s} s exceeds the stability bound {limit_s} s")]
    StepTooLarge { dt_s: f64, limit_s: f64 },

    #[error("polynomial fit needs at least 3 distinct C-rates, got {0}")]
    DegenerateGrid(usize),

    #[error("{}", format_parse(.path, .line, .message))]
    Parse { path: String, line: Option<usize>, message: String },

    #[error("invalid scenario:\n{}", format_violations(.0))]
    Validation(Vec<Violation>),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors that mean "the demand cannot be met", as opposed to bad input or bugs.
    pub fn is_infeasibility(&self) -> bool {
        matches!(self, Error::InfeasibleDemand { .. } | Error::NoFeasiblePoint(_))
    }
}

fn format_parse(path: &str, line: &Option<usize>, message: &str) -> String {
    match line {
        Some(line) => format!("{path}:{line}: {message}"),
        None => format!("{path}: {message}"),
    }
}

fn format_violations(violations: &[Violation]) -> String {
    violations.iter().map(|v| format!("  - {v}")).collect::<Vec<_>>().join("\n")
}
