use super::*;
use crate::baselines::{baseline_schedule, BaselineKind};
use crate::types::fixtures::{mixed_fleet, pack, scenario};
use crate::types::{Pack, PackState};
use proptest::prelude::*;

const PROFILE: [f64; 12] = [-420.0, -700.0, -630.0, -350.0, 230.0, 420.0, 320.0, -420.0, -350.0, 280.0, 460.0, 370.0];

fn serial() -> SolverOptions {
    SolverOptions { parallel: false, ..SolverOptions::default() }
}

fn pair(energy: f64, eta_b: f64) -> Vec<Pack> {
    let a = pack(1, 1);
    let mut b = pack(1, 2);
    b.eta_charge = eta_b;
    b.eta_discharge = eta_b;
    vec![Pack { spec: a, state: PackState::new(energy) }, Pack { spec: b, state: PackState::new(energy) }]
}

fn cost_of(s: &Schedule, sc: &Scenario) -> f64 {
    evaluate_objective(s, sc).unwrap().total.grand_total
}

#[test]
fn single_pack_takes_the_whole_demand() {
    let fleet = vec![Pack { spec: pack(1, 1), state: PackState::new(30.0) }];
    let sc = scenario(fleet, vec![10.0, -20.0, 5.0], 0.15);
    let sol = solve(&build_problem(sc, serial()).unwrap()).unwrap();
    assert_eq!(sol.schedule.row(0), &[10.0, -20.0, 5.0]);
}

#[test]
fn identical_packs_do_no_worse_than_an_even_split() {
    // Fade is concave in throughput, so concentrating load can beat an even split.
    let sc = scenario(pair(30.0, 0.85), vec![24.0, -24.0], 0.15);
    let p = build_problem(sc.clone(), serial()).unwrap();
    let sol = solve(&p).unwrap();
    let even = Schedule::from_net(vec![vec![12.0, -12.0], vec![12.0, -12.0]]).unwrap();
    assert!(sol.costs.total.grand_total <= cost_of(&even, &sc));
    let grid = oracle_solve(&p, 101).unwrap().costs.total.grand_total;
    assert!(sol.costs.total.grand_total <= grid * 1.01);

    let mut swapped = sc.clone();
    swapped.fleet.swap(0, 1);
    let other = solve(&build_problem(swapped, serial()).unwrap()).unwrap();
    assert!((other.costs.total.grand_total - sol.costs.total.grand_total).abs() < 1e-6);
}

#[test]
fn more_efficient_pack_carries_more() {
    let sc = scenario(pair(30.0, 0.80), vec![24.0, -24.0], 0.15);
    let sol = solve(&build_problem(sc, serial()).unwrap()).unwrap();
    for k in 0..2 {
        assert!(sol.schedule.net(0, k).abs() > sol.schedule.net(1, k).abs());
    }
}

#[test]
fn demand_above_fleet_limit_is_rejected() {
    let sc = scenario(pair(30.0, 0.85), vec![61.0], 0.15);
    assert!(matches!(build_problem(sc, serial()), Err(Error::InfeasibleDemand { step: 0, .. })));
}

#[test]
fn solution_is_feasible_and_not_worse_than_baselines() {
    let sc = scenario(mixed_fleet(2), PROFILE.iter().map(|d| d / 10.0).collect(), 0.15);
    let sol = solve(&build_problem(sc.clone(), serial()).unwrap()).unwrap();
    let f = feasibility(&sol.schedule, &sc).unwrap();
    assert!(f.is_feasible(), "{f:?}");
    let best = sol.costs.total.grand_total;
    for kind in [BaselineKind::Soh, BaselineKind::Capacity] {
        let b = baseline_schedule(kind, &sc).unwrap();
        assert!(best <= cost_of(&b, &sc) + 1e-9);
    }
}

#[test]
fn solve_is_deterministic() {
    let sc = scenario(mixed_fleet(1), vec![-40.0, -50.0, 30.0, 20.0], 0.15);
    let opts = SolverOptions { parallel: true, ..SolverOptions::default() };
    let p = build_problem(sc, opts).unwrap();
    let a = solve(&p).unwrap();
    let b = solve(&p).unwrap();
    assert_eq!(a, b);
    let serial_p = build_problem(p.scenario.clone(), serial()).unwrap();
    assert_eq!(solve(&serial_p).unwrap().schedule, a.schedule);
}

#[test]
fn trajectory_matches_resimulation() {
    let sc = scenario(mixed_fleet(1), vec![-40.0, -50.0, 30.0, 20.0], 0.15);
    let sol = solve(&build_problem(sc.clone(), serial()).unwrap()).unwrap();
    let again = simulate_fleet(&sol.schedule, &sc).unwrap();
    assert_eq!(again, sol.trajectory);
    let costs = evaluate_objective(&sol.schedule, &sc).unwrap();
    assert!((costs.total.grand_total - sol.costs.total.grand_total).abs() <= 1e-9);
}

#[test]
fn warm_start_never_loses_to_itself() {
    let sc = scenario(mixed_fleet(1), vec![-40.0, -50.0, 30.0, 20.0], 0.15);
    let p = build_problem(sc.clone(), serial()).unwrap();
    let warm = baseline_schedule(BaselineKind::Capacity, &sc).unwrap();
    let sol = solve_from(&p, Some(&warm)).unwrap();
    assert!(sol.costs.total.grand_total <= cost_of(&warm, &sc) + 1e-12);
    assert_eq!(sol.diagnostics.starts[0].origin, StartOrigin::WarmStart);
}

#[test]
fn oracle_refuses_large_problems() {
    let sc = scenario(mixed_fleet(1), vec![10.0; 5], 0.15);
    let p = build_problem(sc, serial()).unwrap();
    assert!(matches!(oracle_solve(&p, 11), Err(Error::TooLarge(_))));
}

#[test]
fn oracle_finer_nested_grid_is_not_worse() {
    let sc = scenario(pair(30.0, 0.80), vec![20.0, -15.0], 0.15);
    let p = build_problem(sc, serial()).unwrap();
    let coarse = oracle_solve(&p, 11).unwrap().costs.total.grand_total;
    let fine = oracle_solve(&p, 21).unwrap().costs.total.grand_total;
    assert!(fine <= coarse + 1e-12);
}

#[test]
fn solver_matches_oracle_on_small_instance() {
    let sc = scenario(pair(30.0, 0.80), vec![20.0, -15.0, 8.0], 0.15);
    let p = build_problem(sc, serial()).unwrap();
    let grid = oracle_solve(&p, 101).unwrap().costs.total.grand_total;
    let best = solve(&p).unwrap().costs.total.grand_total;
    assert!(best <= grid * 1.01, "{best} vs {grid}");
}

#[test]
fn smoothed_gradient_has_schedule_shape() {
    let sc = scenario(mixed_fleet(1), vec![-40.0, 30.0], 0.15);
    let p = build_problem(sc.clone(), serial()).unwrap();
    let s = baseline_schedule(BaselineKind::Soh, &sc).unwrap();
    let (f, g) = p.smoothed_objective(&s);
    assert!(f > 0.0);
    assert_eq!((g.n_packs(), g.horizon()), (4, 2));
    assert_eq!(p.n_variables(), 8);
}

#[test]
fn repair_mixes_signs_when_demand_is_below_every_minimum() {
    let sc = scenario(pair(30.0, 0.85), vec![1.0], 0.15);
    let model = objective::Model::from_scenario(&sc);
    let x = [2.0, 2.0];
    let mut modes = local::modes_from(&model, &x);
    assert_eq!(modes.signs, vec![1.0, 1.0]);
    assert!(local::repair(&model, &mut modes, &x));
    let lo: f64 = modes.boxes.lo.iter().sum();
    let hi: f64 = modes.boxes.hi.iter().sum();
    assert!(lo <= 1.0 && 1.0 <= hi, "[{lo}, {hi}]");
    assert_eq!(modes.signs.iter().sum::<f64>(), 0.0);
}

#[test]
fn small_demand_is_served_by_opposing_packs() {
    let sc = scenario(pair(30.0, 0.85), vec![1.0, -1.0], 0.15);
    let p = build_problem(sc.clone(), serial()).unwrap();
    let sol = solve(&p).unwrap();
    assert!(feasibility(&sol.schedule, &sc).unwrap().is_feasible());
    let grid = oracle_solve(&p, 101).unwrap().costs.total.grand_total;
    assert!(sol.costs.total.grand_total <= grid * 1.01);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn never_worse_than_baselines(
        scale in 0.05f64..0.12,
        shift in 0usize..12,
        price in 0.05f64..0.3,
    ) {
        let demand: Vec<f64> = (0..6).map(|k| PROFILE[(k + shift) % 12] * scale).collect();
        let sc = scenario(mixed_fleet(1), demand, price);
        let baselines: Vec<f64> = [BaselineKind::Soh, BaselineKind::Capacity]
            .into_iter()
            .filter_map(|kind| baseline_schedule(kind, &sc).ok())
            .filter(|b| feasibility(b, &sc).unwrap().is_feasible())
            .map(|b| cost_of(&b, &sc))
            .collect();
        prop_assume!(!baselines.is_empty());
        let p = build_problem(sc.clone(), SolverOptions { multistarts: 4, ..serial() }).unwrap();
        let sol = solve(&p).unwrap();
        prop_assert!(feasibility(&sol.schedule, &sc).unwrap().is_feasible());
        for b in baselines {
            prop_assert!(sol.costs.total.grand_total <= b + 1e-9);
        }
    }
}
