//! Operating cost models and summary indices.

use serde::{Deserialize, Serialize};

use crate::aging::second_life_throughput;
use crate::error::{Error, Result};
use crate::thermal::temp_at_c;
use crate::types::PackSpec;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostTotals {
    pub energy_loss: f64,
    pub degradation: f64,
    pub decommissioning: f64,
    pub grand_total: f64,
}

impl CostTotals {
    pub fn new(energy_loss: f64, degradation: f64, decommissioning: f64) -> Self {
        CostTotals {
            energy_loss,
            degradation,
            decommissioning,
            grand_total: energy_loss + degradation + decommissioning,
        }
    }

    pub fn add(&self, other: &CostTotals) -> CostTotals {
        CostTotals::new(
            self.energy_loss + other.energy_loss,
            self.degradation + other.degradation,
            self.decommissioning + other.decommissioning,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub per_pack: Vec<CostTotals>,
    pub total: CostTotals,
}

impl CostBreakdown {
    /// Sums pack entries in index order.
    pub fn from_packs(per_pack: Vec<CostTotals>) -> Self {
        let total = per_pack.iter().fold(CostTotals::default(), |acc, c| acc.add(c));
        CostBreakdown { per_pack, total }
    }
}

/// `sum_k sum_j price[k] * loss[j][k] * dt`.
pub fn energy_loss_cost(loss_kw: &[Vec<f64>], price_per_kwh: &[f64], dt_hours: f64) -> f64 {
    loss_kw.iter().map(|row| pack_energy_loss_cost(row, price_per_kwh, dt_hours)).sum()
}

pub fn pack_energy_loss_cost(loss_kw: &[f64], price_per_kwh: &[f64], dt_hours: f64) -> f64 {
    loss_kw.iter().zip(price_per_kwh).map(|(l, p)| l * p * dt_hours).sum()
}

/// Capital cost amortized over the second-life fade budget. Fades are fractions.
pub fn degradation_cost(spec: &PackSpec, fade_start: f64, fade_end: f64) -> f64 {
    spec.capital_cost() / spec.q_sl_fraction * (fade_end - fade_start)
}

/// End-of-life cost amortized the same way, proportional to pack mass.
pub fn decommissioning_cost(spec: &PackSpec, fade_start: f64, fade_end: f64, per_lb_cost: f64) -> f64 {
    spec.mass_lb() * per_lb_cost / spec.q_sl_fraction * (fade_end - fade_start)
}

/// Dollars of fade-driven cost per unit of fade fraction.
pub fn fade_cost_rate(spec: &PackSpec, per_lb_cost: f64) -> f64 {
    (spec.capital_cost() + spec.mass_lb() * per_lb_cost) / spec.q_sl_fraction
}

/// Purchase plus disposal cost per Ah of second-life throughput at a constant
/// C-rate, divided by round-trip efficiency. Lower is better.
pub fn economy_index(spec: &PackSpec, per_lb_cost: f64, c_rate: f64) -> f64 {
    let poly = spec.thermal.temp_poly;
    let z_sl = second_life_throughput(
        &spec.aging,
        c_rate,
        |c| temp_at_c(&poly, c),
        1.0 - spec.soh_initial,
        spec.q_sl_fraction,
    );
    (spec.capital_cost() + spec.mass_lb() * per_lb_cost) / (spec.round_trip_efficiency() * z_sl)
}

/// Average cost of storage: dollars per kWh of energy moved.
pub fn acos(total_cost: f64, throughput_kwh: f64) -> Result<f64> {
    if throughput_kwh > 0.0 {
        Ok(total_cost / throughput_kwh)
    } else {
        Err(Error::ZeroThroughput)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::fixtures::pack;
    use proptest::prelude::*;

    #[test]
    fn energy_loss_examples() {
        assert_eq!(energy_loss_cost(&[vec![0.0; 12]], &[0.15; 12], 1.0), 0.0);
        let c = energy_loss_cost(&[vec![1.0; 12]], &[0.15; 12], 1.0);
        assert!((c - 1.80).abs() < 1e-12);
        let c2 = energy_loss_cost(&[vec![1.0; 12]], &[0.30; 12], 1.0);
        assert!((c2 - 2.0 * c).abs() < 1e-12);
        let half = energy_loss_cost(&[vec![1.0; 12]], &[0.15; 12], 0.5);
        assert!((half - 0.9).abs() < 1e-12);
    }

    #[test]
    fn degradation_examples() {
        let p = pack(1, 1);
        assert_eq!(degradation_cost(&p, 0.02, 0.02), 0.0);
        assert!((degradation_cost(&p, 0.0, 0.15) - 5400.0).abs() < 1e-9);
        assert!((degradation_cost(&p, 0.03, 0.04) - 360.0).abs() < 1e-9);
    }

    #[test]
    fn decommissioning_examples() {
        let p = pack(1, 1);
        let full = decommissioning_cost(&p, 0.0, 0.15, 1.75);
        assert!((full - 464.10).abs() < 1e-9);
        assert_eq!(decommissioning_cost(&p, 0.1, 0.1, 1.75), 0.0);
        assert!((decommissioning_cost(&p, 0.0, 0.075, 1.75) - full / 2.0).abs() < 1e-9);
    }

    #[test]
    fn full_amortization_for_every_type() {
        for kind in 1..=4 {
            let p = pack(kind, 1);
            let total =
                degradation_cost(&p, 0.0, p.q_sl_fraction) + decommissioning_cost(&p, 0.0, p.q_sl_fraction, 1.75);
            let expected = p.capital_cost() + p.mass_lb() * 1.75;
            assert!((total - expected).abs() / expected < 1e-12);
        }
    }

    #[test]
    fn economy_index_orders_pack_types() {
        let ei: Vec<f64> = (1..=4).map(|k| economy_index(&pack(k, 1), 1.75, 0.5)).collect();
        let best = ei.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(ei[0], best, "{ei:?}");

        let base = pack(1, 1);
        let mut worse_eta = base.clone();
        worse_eta.eta_discharge = 0.8;
        assert!(economy_index(&worse_eta, 1.75, 0.5) > economy_index(&base, 1.75, 0.5));
        let mut pricier = base.clone();
        pricier.capital_cost_per_kwh = 120.0;
        assert!(economy_index(&pricier, 1.75, 0.5) > economy_index(&base, 1.75, 0.5));
    }

    #[test]
    fn acos_examples() {
        assert!((acos(183.26, 4000.0).unwrap() - 0.045815).abs() < 1e-12);
        assert_eq!(acos(0.0, 10.0).unwrap(), 0.0);
        assert!(matches!(acos(1.0, 0.0), Err(Error::ZeroThroughput)));
    }

    #[test]
    fn breakdown_totals_sum_components() {
        let b = CostBreakdown::from_packs(vec![CostTotals::new(1.0, 2.0, 3.0), CostTotals::new(0.5, 0.25, 0.125)]);
        assert_eq!(b.total.energy_loss, 1.5);
        assert_eq!(b.total.grand_total, 1.5 + 2.25 + 3.125);
    }

    proptest! {
        #[test]
        fn loss_cost_invariant_under_pack_reordering(
            rows in proptest::collection::vec(proptest::collection::vec(0.0f64..5.0, 6), 1..6),
            seed in 0usize..100,
        ) {
            let prices = [0.1, 0.2, 0.15, 0.12, 0.18, 0.11];
            let a = energy_loss_cost(&rows, &prices, 1.0);
            let mut shuffled = rows.clone();
            shuffled.rotate_left(seed % rows.len());
            let b = energy_loss_cost(&shuffled, &prices, 1.0);
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
            prop_assert!(a >= 0.0);
        }

        #[test]
        fn fade_costs_additive_over_windows(a in 0.0f64..0.05, b in 0.0f64..0.05, c in 0.0f64..0.05) {
            let p = pack(2, 1);
            let (f0, f1, f2) = (a, a + b, a + b + c);
            let split = degradation_cost(&p, f0, f1) + degradation_cost(&p, f1, f2);
            prop_assert!((split - degradation_cost(&p, f0, f2)).abs() < 1e-9);
            let split = decommissioning_cost(&p, f0, f1, 1.75) + decommissioning_cost(&p, f1, f2, 1.75);
            prop_assert!((split - decommissioning_cost(&p, f0, f2, 1.75)).abs() < 1e-9);
        }
    }
}
