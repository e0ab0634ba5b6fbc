//! One local search: smoothed relaxation, mode fixing, exact refinement.

use super::newton::{self, NewtonOptions};
use super::objective::{Magnitude, Model, Penalty};
use super::projection::StepProjector;
use super::SolverOptions;

/// Rounds of switching off pack-steps that break an energy bound.
const MAX_RELEASES: usize = 8;

#[derive(Debug, Clone)]
pub(crate) struct LocalResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
struct AlmStats {
    iterations: usize,
    converged: bool,
    feasible: bool,
    /// Largest energy-bound violation at the end, kWh.
    violation: f64,
}

/// Per-variable box, indexed pack-major like the variables.
#[derive(Debug, Clone)]
pub(crate) struct Boxes {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

pub(crate) struct Projector<'a> {
    model: &'a Model,
    boxes: &'a Boxes,
    inner: StepProjector,
    y: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl<'a> Projector<'a> {
    pub fn new(model: &'a Model, boxes: &'a Boxes) -> Self {
        Projector {
            model,
            boxes,
            inner: StepProjector::default(),
            y: vec![0.0; model.n],
            lo: vec![0.0; model.n],
            hi: vec![0.0; model.n],
        }
    }

    pub fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.boxes.lo, &self.boxes.hi)
    }

    /// Projects every step onto its balance hyperplane within the boxes.
    pub fn apply(&mut self, x: &mut [f64]) -> bool {
        let (n, h) = (self.model.n, self.model.h);
        let mut ok = true;
        for k in 0..h {
            for j in 0..n {
                let i = j * h + k;
                self.y[j] = x[i];
                self.lo[j] = self.boxes.lo[i];
                self.hi[j] = self.boxes.hi[i];
            }
            ok &= self.inner.project(&mut self.y, &self.lo, &self.hi, self.model.demand[k]);
            for j in 0..n {
                x[j * h + k] = self.y[j];
            }
        }
        ok
    }
}

pub(crate) fn relaxed_boxes(model: &Model) -> Boxes {
    let size = model.n * model.h;
    let mut lo = vec![0.0; size];
    let mut hi = vec![0.0; size];
    for (j, pm) in model.packs.iter().enumerate() {
        if pm.retired {
            continue;
        }
        for k in 0..model.h {
            lo[j * model.h + k] = -pm.p_max;
            hi[j * model.h + k] = pm.p_max;
        }
    }
    Boxes { lo, hi }
}

fn alm(model: &Model, x: &mut [f64], boxes: &Boxes, mag: Magnitude, tol: f64, opts: &SolverOptions) -> AlmStats {
    let size = x.len();
    let mut pen = Penalty::new(size, opts.penalty_start, opts.energy_margin_kwh);
    let mut projector = Projector::new(model, boxes);
    let inner_opts = NewtonOptions { max_iter: opts.max_inner, tol };
    let mut iterations = 0;
    let mut prev = f64::INFINITY;
    let mut stalled = 0;
    let mut stats = AlmStats { iterations: 0, converged: false, feasible: false, violation: f64::INFINITY };
    for _ in 0..opts.max_outer {
        let inner = newton::minimize(model, x, mag, &pen, &mut projector, inner_opts);
        iterations += inner.iterations;
        let violation = model.update_multipliers(x, mag, &mut pen);
        let feasible = violation <= 0.5 * pen.margin;
        stats = AlmStats { iterations, converged: inner.converged && feasible, feasible, violation };
        if stats.converged {
            break;
        }
        if violation > 0.25 * prev {
            pen.rho = (pen.rho * 10.0).min(1e10);
        }
        // A violation that ignores a growing penalty means the boxes cannot satisfy it.
        stalled = if violation > 0.99 * prev { stalled + 1 } else { 0 };
        if stalled >= 3 {
            break;
        }
        prev = violation;
    }
    stats.iterations = iterations;
    stats
}

/// Fixed signs and boxes derived from a relaxed point.
#[derive(Debug, Clone)]
pub(crate) struct Modes {
    pub signs: Vec<f64>,
    pub boxes: Boxes,
    /// Pack-steps switched off to restore an energy bound; repair leaves them idle.
    pub locked: Vec<bool>,
}

impl Modes {
    fn set(&mut self, model: &Model, i: usize, sign: f64) {
        let pm = &model.packs[i / model.h];
        self.signs[i] = sign;
        let (lo, hi) = if sign > 0.0 {
            (pm.p_min, pm.p_max)
        } else if sign < 0.0 {
            (-pm.p_max, -pm.p_min)
        } else {
            (0.0, 0.0)
        };
        self.boxes.lo[i] = lo;
        self.boxes.hi[i] = hi;
    }
}

pub(crate) fn modes_from(model: &Model, x: &[f64]) -> Modes {
    let size = model.n * model.h;
    let mut modes = Modes {
        signs: vec![0.0; size],
        boxes: Boxes { lo: vec![0.0; size], hi: vec![0.0; size] },
        locked: vec![false; size],
    };
    for i in 0..size {
        let pm = &model.packs[i / model.h];
        if pm.retired {
            continue;
        }
        let m = x[i].abs();
        let threshold = if pm.p_min > 0.0 { 0.5 * pm.p_min } else { 1e-9 * pm.p_max };
        if m >= threshold && m > 0.0 {
            modes.set(model, i, x[i].signum());
        }
    }
    modes
}

/// Switches modes until every step's balance is reachable. Returns false if impossible.
pub(crate) fn repair(model: &Model, modes: &mut Modes, x: &[f64]) -> bool {
    let (n, h) = (model.n, model.h);
    for k in 0..h {
        let mut moves = 0;
        loop {
            let idx = |j: usize| j * h + k;
            let sum_lo: f64 = (0..n).map(|j| modes.boxes.lo[idx(j)]).sum();
            let sum_hi: f64 = (0..n).map(|j| modes.boxes.hi[idx(j)]).sum();
            let demand = model.demand[k];
            let tol = 1e-9 * demand.abs().max(1.0);
            let up = if demand > sum_hi + tol {
                1.0
            } else if demand < sum_lo - tol {
                -1.0
            } else {
                break;
            };
            // Single switches can cycle when only mixed signs reach the demand.
            if moves > 2 * n + 2 {
                if !rebalance_step(model, modes, x, k, tol) {
                    return false;
                }
                break;
            }
            moves += 1;
            // Cheapest move in direction `up`: release a pack running the other way,
            // or switch on an idle pack.
            let mut best: Option<(f64, usize, f64)> = None;
            for j in 0..n {
                let i = idx(j);
                let pm = &model.packs[j];
                if pm.retired {
                    continue;
                }
                let s = modes.signs[i];
                let (distance, new_sign) = if s == -up {
                    (x[i].abs(), 0.0)
                } else if s == 0.0 && !modes.locked[i] {
                    ((pm.p_min - up * x[i]).max(0.0), up)
                } else {
                    continue;
                };
                if best.is_none_or(|b| distance < b.0) {
                    best = Some((distance, i, new_sign));
                }
            }
            match best {
                Some((_, i, sign)) => modes.set(model, i, sign),
                None => {
                    if !rebalance_step(model, modes, x, k, tol) {
                        return false;
                    }
                    break;
                }
            }
        }
    }
    true
}

/// Exact modes for step `k`; energy locks are a heuristic and are dropped if they
/// leave the demand unreachable.
fn rebalance_step(model: &Model, modes: &mut Modes, x: &[f64], k: usize, tol: f64) -> bool {
    if exact_step_modes(model, modes, x, k, tol) {
        return true;
    }
    let h = model.h;
    let locked: Vec<usize> = (0..model.n).map(|j| j * h + k).filter(|&i| modes.locked[i]).collect();
    if locked.is_empty() {
        return false;
    }
    for i in locked {
        modes.locked[i] = false;
    }
    exact_step_modes(model, modes, x, k, tol)
}

/// Mode choices for one pack-step as `(sign, lo, hi)`, nearest to `x` first.
/// With `headroom = (discharge, charge)` limits in kW, signs that cannot run at
/// minimum power without leaving the energy bounds are dropped and the rest narrowed.
fn mode_options(model: &Model, modes: &Modes, i: usize, x: f64, headroom: Option<(f64, f64)>) -> Vec<(f64, f64, f64)> {
    let pm = &model.packs[i / model.h];
    if pm.retired || modes.locked[i] {
        return vec![(0.0, 0.0, 0.0)];
    }
    let (dis, chg) = headroom.unwrap_or((pm.p_max, pm.p_max));
    let mut out = vec![(0.0, 0.0, 0.0)];
    if dis.min(pm.p_max) >= pm.p_min {
        out.push((1.0, pm.p_min, dis.min(pm.p_max)));
    }
    if chg.min(pm.p_max) >= pm.p_min {
        out.push((-1.0, -chg.min(pm.p_max), -pm.p_min));
    }
    out.sort_by(|a, b| {
        let d = |o: &(f64, f64, f64)| (o.1 - x).max(x - o.2).max(0.0);
        d(a).total_cmp(&d(b))
    });
    out
}

/// Power limits `(discharge, charge)` at step `k` from the energy reached by
/// the earlier steps, with `x` clamped into the current boxes.
fn headroom(model: &Model, modes: &Modes, x: &[f64], j: usize, k: usize) -> (f64, f64) {
    let pm = &model.packs[j];
    let h = model.h;
    let mut e = pm.e0;
    for t in 0..k {
        let i = j * h + t;
        let p = x[i].clamp(modes.boxes.lo[i], modes.boxes.hi[i]);
        e += if p >= 0.0 { -p / pm.eta_d } else { -p * pm.eta_c } * model.dt;
    }
    let dis = (e - pm.e_min).max(0.0) * pm.eta_d / model.dt;
    let chg = (pm.e_max - e).max(0.0) / (pm.eta_c * model.dt);
    (dis, chg)
}

/// Sorted union of `set + option` over all options, overlapping pieces merged.
fn add_options(set: &[(f64, f64)], options: &[(f64, f64, f64)], tol: f64) -> Vec<(f64, f64)> {
    let mut parts: Vec<(f64, f64)> =
        set.iter().flat_map(|&(lo, hi)| options.iter().map(move |o| (lo + o.1, hi + o.2))).collect();
    parts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(parts.len());
    for (lo, hi) in parts {
        match merged.last_mut() {
            Some(last) if lo <= last.1 + tol => last.1 = last.1.max(hi),
            _ => merged.push((lo, hi)),
        }
    }
    merged
}

fn meets(set: &[(f64, f64)], lo: f64, hi: f64) -> bool {
    set.iter().any(|&(a, b)| a <= hi && lo <= b)
}

/// Picks modes for step `k` whose box sum contains the demand, keeping each pack
/// as close to `x` as the remaining packs allow. Energy headroom is respected when
/// possible. A `forced` pack-step keeps its current sign. Returns false if none exist.
fn exact_step_modes(model: &Model, modes: &mut Modes, x: &[f64], k: usize, tol: f64) -> bool {
    exact_step_modes_with(model, modes, x, k, tol, None)
}

fn exact_step_modes_with(
    model: &Model,
    modes: &mut Modes,
    x: &[f64],
    k: usize,
    tol: f64,
    forced: Option<usize>,
) -> bool {
    let (n, h) = (model.n, model.h);
    for energy_aware in [true, false] {
        let options: Vec<Vec<(f64, f64, f64)>> = (0..n)
            .map(|j| {
                let i = j * h + k;
                let room = energy_aware.then(|| headroom(model, modes, x, j, k));
                let mut o = mode_options(model, modes, i, x[i], room);
                if forced == Some(i) {
                    o.retain(|opt| opt.0 == modes.signs[i]);
                }
                o
            })
            .collect();
        if let Some(choice) = pick_step_modes(&options, model.demand[k], tol) {
            for (j, sign) in choice.into_iter().enumerate() {
                modes.set(model, j * h + k, sign);
            }
            return true;
        }
    }
    false
}

fn pick_step_modes(options: &[Vec<(f64, f64, f64)>], demand: f64, tol: f64) -> Option<Vec<f64>> {
    let n = options.len();
    // reach[j]: sums attainable by packs j.. n-1.
    let mut reach = vec![vec![(0.0, 0.0)]; n + 1];
    for j in (0..n).rev() {
        reach[j] = add_options(&reach[j + 1], &options[j], tol);
    }
    let (mut lo, mut hi) = (demand - tol, demand + tol);
    if !meets(&reach[0], lo, hi) {
        return None;
    }
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let &(sign, olo, ohi) = options[j].iter().find(|o| meets(&reach[j + 1], lo - o.2, hi - o.1))?;
        out.push(sign);
        (lo, hi) = (lo - ohi, hi - olo);
    }
    Some(out)
}

/// For each pack whose energy leaves its bounds, switches off the smallest
/// pack-step pushing it out. Returns false if nothing could be switched off.
fn release_energy(model: &Model, modes: &mut Modes, x: &[f64], margin: f64) -> bool {
    let h = model.h;
    let mut e = vec![0.0; h];
    let mut changed = false;
    for (j, pm) in model.packs.iter().enumerate() {
        if pm.retired {
            continue;
        }
        model.energies(j, x, Magnitude::Signed(&modes.signs), &mut e);
        let Some((k, direction)) = (0..h).find_map(|k| {
            if e[k] < pm.e_min + 0.5 * margin {
                Some((k, 1.0))
            } else if e[k] > pm.e_max - 0.5 * margin {
                Some((k, -1.0))
            } else {
                None
            }
        }) else {
            continue;
        };
        let culprit = (0..=k)
            .map(|t| j * h + t)
            .filter(|&i| modes.signs[i] == direction)
            .min_by(|&a, &b| x[a].abs().total_cmp(&x[b].abs()));
        if let Some(i) = culprit {
            modes.set(model, i, 0.0);
            modes.locked[i] = true;
            changed = true;
        }
    }
    changed
}

fn refine(model: &Model, x: &mut [f64], modes: &Modes, opts: &SolverOptions) -> AlmStats {
    for i in 0..x.len() {
        x[i] = x[i].clamp(modes.boxes.lo[i], modes.boxes.hi[i]);
    }
    alm(model, x, &modes.boxes, Magnitude::Signed(&modes.signs), opts.inner_tol, opts)
}

fn exact_cost(model: &Model, x: &[f64], modes: &Modes) -> f64 {
    model.cost(x, Magnitude::Signed(&modes.signs), None)
}

/// Runs one local search from `x0`. `skip_relaxation` starts mode fixing directly from `x0`.
pub(crate) fn local_search(
    model: &Model,
    x0: &[f64],
    skip_relaxation: bool,
    opts: &SolverOptions,
) -> Option<LocalResult> {
    let mut x = x0.to_vec();
    let mut iterations = 0;
    if !skip_relaxation {
        let boxes = relaxed_boxes(model);
        // The relaxation only has to pick modes, so it stops early.
        let a = alm(model, &mut x, &boxes, Magnitude::Smooth(opts.smoothing_kw), 10.0 * opts.inner_tol, opts);
        iterations += a.iterations;
    }

    let mut modes = modes_from(model, &x);
    let mut releases = 0;
    let b = loop {
        if !repair(model, &mut modes, &x) {
            return None;
        }
        let b = refine(model, &mut x, &modes, opts);
        iterations += b.iterations;
        if b.feasible {
            break b;
        }
        releases += 1;
        if releases > MAX_RELEASES || !release_energy(model, &mut modes, &x, opts.energy_margin_kwh) {
            if x.len() > opts.mode_search_max_vars {
                return None;
            }
            let (stats, spent) = restore_feasibility(model, &mut x, &mut modes, b.violation, opts)?;
            iterations += spent;
            break stats;
        }
    };
    let mut converged = b.converged;
    let mut best_cost = exact_cost(model, &x, &modes);

    // Try switching off packs that sit at their minimum power.
    for _ in 0..opts.improvement_rounds {
        let mut trial_modes = modes.clone();
        let mut changed = false;
        for i in 0..x.len() {
            let pm = &model.packs[i / model.h];
            if modes.signs[i] != 0.0 && pm.p_min > 0.0 && x[i].abs() <= pm.p_min * (1.0 + 1e-6) + 1e-9 {
                trial_modes.set(model, i, 0.0);
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut trial_x = x.clone();
        if !repair(model, &mut trial_modes, &trial_x) {
            break;
        }
        let t = refine(model, &mut trial_x, &trial_modes, opts);
        iterations += t.iterations;
        if !t.feasible {
            break;
        }
        let cost = exact_cost(model, &trial_x, &trial_modes);
        if cost < best_cost {
            best_cost = cost;
            x = trial_x;
            modes = trial_modes;
            converged = t.converged;
        } else {
            break;
        }
    }

    // Opposing flows in one step come from minimum powers; try the reverse orientation.
    let (n, h) = (model.n, model.h);
    for k in 0..h {
        let has = |s: f64| (0..n).any(|j| modes.signs[j * h + k] == s);
        if !(has(1.0) && has(-1.0)) {
            continue;
        }
        let mut trial_modes = modes.clone();
        for j in 0..n {
            let i = j * h + k;
            if modes.signs[i] != 0.0 {
                trial_modes.set(model, i, -modes.signs[i]);
            }
        }
        let mut trial_x = x.clone();
        if !repair(model, &mut trial_modes, &trial_x) {
            continue;
        }
        let t = refine(model, &mut trial_x, &trial_modes, opts);
        iterations += t.iterations;
        if !t.feasible {
            continue;
        }
        let cost = exact_cost(model, &trial_x, &trial_modes);
        if cost < best_cost {
            best_cost = cost;
            x = trial_x;
            modes = trial_modes;
            converged = t.converged;
        }
    }

    if x.len() <= opts.mode_search_max_vars {
        iterations += mode_search(model, &mut x, &mut modes, &mut best_cost, &mut converged, opts);
    }

    // Snap pinned variables exactly.
    for i in 0..x.len() {
        if modes.signs[i] == 0.0 {
            x[i] = 0.0;
        }
    }
    Some(LocalResult { x, iterations, converged })
}

/// First-improvement search over single, then paired, pack-step mode changes,
/// each followed by an exact rebalance of its step. Returns the iterations spent.
fn mode_search(
    model: &Model,
    x: &mut Vec<f64>,
    modes: &mut Modes,
    best_cost: &mut f64,
    converged: &mut bool,
    opts: &SolverOptions,
) -> usize {
    let mut iterations = 0;
    loop {
        let base: &[f64] = x;
        let mut accepted = None;
        for trial_modes in neighbours(model, modes, base) {
            let mut trial_x = base.to_vec();
            let t = refine(model, &mut trial_x, &trial_modes, opts);
            iterations += t.iterations;
            if !t.feasible {
                continue;
            }
            let cost = exact_cost(model, &trial_x, &trial_modes);
            if cost < *best_cost - 1e-12 * best_cost.abs().max(1.0) {
                accepted = Some((cost, t.converged, trial_x, trial_modes));
                break;
            }
        }
        let Some((cost, ok, trial_x, trial_modes)) = accepted else {
            return iterations;
        };
        *best_cost = cost;
        *converged = ok;
        *x = trial_x;
        *modes = trial_modes;
    }
}

/// Cap on paired mode changes tried per stall of [`restore_feasibility`].
const MAX_PAIR_TRIALS: usize = 4096;

/// Sets pack-step `i` to `sign` and rebalances its step around it.
fn changed_modes(model: &Model, modes: &Modes, x: &[f64], i: usize, sign: f64) -> Option<Modes> {
    let mut trial = modes.clone();
    trial.locked.fill(false);
    trial.set(model, i, sign);
    let k = i % model.h;
    let tol = 1e-9 * model.demand[k].abs().max(1.0);
    exact_step_modes_with(model, &mut trial, x, k, tol, Some(i)).then_some(trial)
}

/// Every `(pack-step, sign)` differing from the current modes.
fn mode_changes(model: &Model, modes: &Modes) -> Vec<(usize, f64)> {
    (0..modes.signs.len())
        .filter(|&i| !model.packs[i / model.h].retired)
        .flat_map(|i| [0.0, 1.0, -1.0].into_iter().map(move |s| (i, s)))
        .filter(|&(i, s)| s != modes.signs[i])
        .collect()
}

/// Single mode changes, then pairs moving one pack at two steps, up to
/// [`MAX_PAIR_TRIALS`] pairs.
fn neighbours<'a>(model: &'a Model, modes: &Modes, x: &'a [f64]) -> impl Iterator<Item = Modes> + 'a {
    let singles: Vec<(usize, Modes)> = mode_changes(model, modes)
        .into_iter()
        .filter_map(|(i, s)| changed_modes(model, modes, x, i, s).map(|m| (i, m)))
        .collect();
    let firsts = singles.clone();
    singles.into_iter().map(|(_, m)| m).chain(
        firsts
            .into_iter()
            .flat_map(move |(i, first)| {
                mode_changes(model, &first)
                    .into_iter()
                    .filter(|&(i2, _)| i2 / model.h == i / model.h && i2 > i)
                    .filter_map(|(i2, s)| changed_modes(model, &first, x, i2, s))
                    .collect::<Vec<_>>()
            })
            .take(MAX_PAIR_TRIALS),
    )
}

/// Single, then paired, mode changes accepted while they shrink the energy
/// violation, until one refinement is feasible. Returns its stats and the
/// iterations spent.
fn restore_feasibility(
    model: &Model,
    x: &mut Vec<f64>,
    modes: &mut Modes,
    mut violation: f64,
    opts: &SolverOptions,
) -> Option<(AlmStats, usize)> {
    let mut iterations = 0;
    loop {
        let base: &[f64] = x;
        let mut accepted = None;
        for trial_modes in neighbours(model, modes, base) {
            let mut trial_x = base.to_vec();
            let t = refine(model, &mut trial_x, &trial_modes, opts);
            iterations += t.iterations;
            if t.feasible || t.violation < violation - 1e-9 {
                accepted = Some((t, trial_x, trial_modes));
                break;
            }
        }
        let (t, trial_x, trial_modes) = accepted?;
        *x = trial_x;
        *modes = trial_modes;
        violation = t.violation;
        if t.feasible {
            return Some((t, iterations));
        }
    }
}
