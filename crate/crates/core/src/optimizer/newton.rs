//! Projected Newton steps with a pack-block Hessian.
//!
//! Each pack's cost and penalty depend only on that pack's row, so the Hessian
//! is block diagonal with one `h x h` block per pack. Blocks are formed by
//! central differences of the analytic gradient and made positive definite
//! through their eigenvalues. The per-step balance constraints couple the
//! blocks through one multiplier per step, found from an `h x h` system.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::local::Projector;
use super::objective::{Magnitude, Model, Penalty};

#[derive(Debug, Clone, Copy)]
pub(crate) struct NewtonOptions {
    pub max_iter: usize,
    /// Stop when `max |P(x - g) - x|` falls below this.
    pub tol: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct NewtonStats {
    pub iterations: usize,
    pub converged: bool,
}

const ARMIJO: f64 = 1e-4;
const BACKTRACKS: usize = 40;
const CURVATURE_FLOOR: f64 = 1e-9;
const ROUNDING: f64 = 1e-11;

struct Evaluator<'a> {
    model: &'a Model,
    mag: Magnitude<'a>,
    pen: &'a Penalty,
    scratch: Vec<f64>,
}

impl Evaluator<'_> {
    fn full(&mut self, x: &[f64], g: &mut [f64]) -> f64 {
        let h = self.model.h;
        let mut f = 0.0;
        for j in 0..self.model.n {
            f += self.pack(j, x, &mut g[j * h..(j + 1) * h]);
        }
        f
    }

    fn pack(&mut self, j: usize, x: &[f64], g: &mut [f64]) -> f64 {
        self.model.pack_objective(j, x, self.mag, self.pen, &mut self.scratch, g)
    }
}

fn at_bound(v: f64, b: f64) -> bool {
    (v - b).abs() <= 1e-12 * b.abs().max(1.0)
}

/// Minimises cost plus penalty over the boxes and balance constraints held by `projector`.
pub(crate) fn minimize(
    model: &Model,
    x: &mut [f64],
    mag: Magnitude,
    pen: &Penalty,
    projector: &mut Projector,
    opts: NewtonOptions,
) -> NewtonStats {
    let (n, h) = (model.n, model.h);
    let size = n * h;
    let mut ev = Evaluator { model, mag, pen, scratch: vec![0.0; h] };
    projector.apply(x);

    let mut g = vec![0.0; size];
    let mut p = vec![0.0; size];
    let mut d = vec![0.0; size];
    let mut trial = vec![0.0; size];
    let mut g_trial = vec![0.0; size];
    let mut work = x.to_vec();
    let mut gp = vec![0.0; h];
    let mut gm = vec![0.0; h];
    let mut f = ev.full(x, &mut g);

    let mut iterations = 0;
    loop {
        for i in 0..size {
            p[i] = x[i] - g[i];
        }
        projector.apply(&mut p);
        let pg = (0..size).map(|i| (p[i] - x[i]).abs()).fold(0.0, f64::max);
        if pg <= opts.tol {
            return NewtonStats { iterations, converged: true };
        }
        if iterations >= opts.max_iter {
            return NewtonStats { iterations, converged: false };
        }
        iterations += 1;

        // Variables held at a bound by the projected gradient stay fixed.
        let (lo, hi) = projector.bounds();
        let free: Vec<bool> = (0..size)
            .map(|i| {
                if hi[i] <= lo[i] {
                    return false;
                }
                !((at_bound(x[i], lo[i]) && at_bound(p[i], lo[i])) || (at_bound(x[i], hi[i]) && at_bound(p[i], hi[i])))
            })
            .collect();

        let mut coupling = DMatrix::<f64>::zeros(h, h);
        let mut rhs = DVector::<f64>::zeros(h);
        let mut blocks: Vec<Option<(Vec<usize>, DMatrix<f64>)>> = Vec::with_capacity(n);
        work.copy_from_slice(x);
        for j in 0..n {
            let base = j * h;
            let steps: Vec<usize> = (0..h).filter(|&k| free[base + k]).collect();
            let m = steps.len();
            if m == 0 {
                blocks.push(None);
                continue;
            }
            let mut hess = DMatrix::<f64>::zeros(m, m);
            for (a, &k) in steps.iter().enumerate() {
                let i = base + k;
                let step = 1e-6 * x[i].abs().max(1.0);
                work[i] = x[i] + step;
                ev.pack(j, &work, &mut gp);
                work[i] = x[i] - step;
                ev.pack(j, &work, &mut gm);
                work[i] = x[i];
                for (b, &kb) in steps.iter().enumerate() {
                    hess[(b, a)] = (gp[kb] - gm[kb]) / (2.0 * step);
                }
            }
            let sym = (&hess + hess.transpose()) * 0.5;
            let eig = SymmetricEigen::new(sym);
            let inv_vals = eig.eigenvalues.map(|l| 1.0 / l.abs().max(CURVATURE_FLOOR));
            let inv = &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
            let g_free = DVector::from_iterator(m, steps.iter().map(|&k| g[base + k]));
            let ig = &inv * g_free;
            for (a, &ka) in steps.iter().enumerate() {
                rhs[ka] -= ig[a];
                for (b, &kb) in steps.iter().enumerate() {
                    coupling[(ka, kb)] += inv[(a, b)];
                }
            }
            blocks.push(Some((steps, inv)));
        }
        for k in 0..h {
            if coupling[(k, k)] == 0.0 {
                coupling[(k, k)] = 1.0;
            }
        }
        let nu = coupling.clone().lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(h));

        d.iter_mut().for_each(|v| *v = 0.0);
        for (j, block) in blocks.iter().enumerate() {
            let Some((steps, inv)) = block else { continue };
            let base = j * h;
            let shifted = DVector::from_iterator(steps.len(), steps.iter().map(|&k| g[base + k] + nu[k]));
            let dj = -(inv * shifted);
            for (a, &k) in steps.iter().enumerate() {
                d[base + k] = dj[a];
            }
        }

        let accepted = search(&mut ev, projector, x, f, &g, &d, &mut trial, &mut g_trial).or_else(|| {
            // Newton direction failed; fall back to the projected gradient path.
            for i in 0..size {
                d[i] = -g[i];
            }
            search(&mut ev, projector, x, f, &g, &d, &mut trial, &mut g_trial)
        });
        match accepted {
            Some(f_new) => {
                x.copy_from_slice(&trial);
                g.copy_from_slice(&g_trial);
                f = f_new;
            }
            None => {
                // No decrease found: stationary if the first-order gain is below rounding.
                let gain: f64 = (0..size).map(|i| g[i] * (x[i] - p[i])).sum();
                let converged = gain <= ROUNDING * (1.0 + f.abs());
                return NewtonStats { iterations, converged };
            }
        }
    }
}

/// Backtracking along the projected path `P(x + a d)`.
#[allow(clippy::too_many_arguments)]
fn search(
    ev: &mut Evaluator,
    projector: &mut Projector,
    x: &[f64],
    f: f64,
    g: &[f64],
    d: &[f64],
    trial: &mut [f64],
    g_trial: &mut [f64],
) -> Option<f64> {
    let mut alpha = 1.0;
    for _ in 0..BACKTRACKS {
        for i in 0..x.len() {
            trial[i] = x[i] + alpha * d[i];
        }
        projector.apply(trial);
        let slope: f64 = (0..x.len()).map(|i| g[i] * (trial[i] - x[i])).sum();
        if slope < 0.0 {
            let ft = ev.full(trial, g_trial);
            if ft <= f + ARMIJO * slope {
                return Some(ft);
            }
        } else if slope == 0.0 {
            return None;
        }
        alpha *= 0.3;
    }
    None
}
