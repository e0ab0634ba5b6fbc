//! Euclidean projection onto `{x : lo <= x <= hi, sum(x) = target}`.

/// Scratch space reused across projections of the same size.
#[derive(Debug, Default, Clone)]
pub(crate) struct StepProjector {
    events: Vec<(f64, i8)>,
}

impl StepProjector {
    /// Projects `y` in place. Returns `false` when the set is empty
    /// (`sum(lo) > target` or `sum(hi) < target`); `y` is then clamped to the box.
    pub fn project(&mut self, y: &mut [f64], lo: &[f64], hi: &[f64], target: f64) -> bool {
        let n = y.len();
        let sum_lo: f64 = lo.iter().sum();
        let sum_hi: f64 = hi.iter().sum();
        let scale = 1e-12 * (sum_hi - sum_lo).abs().max(1.0);
        if target < sum_lo - scale || target > sum_hi + scale {
            for i in 0..n {
                y[i] = y[i].clamp(lo[i], hi[i]);
            }
            return false;
        }
        if target <= sum_lo {
            y.copy_from_slice(lo);
            return true;
        }
        if target >= sum_hi {
            y.copy_from_slice(hi);
            return true;
        }

        // x_i(t) = clamp(y_i - t, lo_i, hi_i) is nonincreasing in t; find sum = target.
        // Each variable is at hi for t <= y_i - hi_i and at lo for t >= y_i - lo_i.
        self.events.clear();
        for i in 0..n {
            if hi[i] > lo[i] {
                self.events.push((y[i] - hi[i], -1));
                self.events.push((y[i] - lo[i], 1));
            }
        }
        self.events.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let mut t_prev = self.events[0].0;
        let mut value = sum_hi;
        let mut slope = 0.0f64;
        let mut t_star = self.events.last().unwrap().0;
        for &(t, kind) in &self.events {
            let next = value + slope * (t - t_prev);
            if next <= target && slope < 0.0 {
                t_star = t_prev + (target - value) / slope;
                break;
            }
            value = next;
            t_prev = t;
            slope += kind as f64;
        }
        for i in 0..n {
            y[i] = (y[i] - t_star).clamp(lo[i], hi[i]);
        }

        // Remove rounding drift using the variables strictly inside their box.
        let residual = target - y.iter().sum::<f64>();
        if residual != 0.0 {
            let free: Vec<usize> = (0..n)
                .filter(|&i| {
                    let room = if residual > 0.0 { hi[i] - y[i] } else { y[i] - lo[i] };
                    room > residual.abs()
                })
                .collect();
            if let Some(&i) = free.first() {
                y[i] += residual;
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(y: &[f64], lo: &[f64], hi: &[f64], target: f64) -> Vec<f64> {
        // Bisection on the shift as an independent reference.
        let f = |t: f64| -> f64 { (0..y.len()).map(|i| (y[i] - t).clamp(lo[i], hi[i])).sum() };
        let (mut a, mut b) = (-1e6, 1e6);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if f(m) > target {
                a = m;
            } else {
                b = m;
            }
        }
        let t = 0.5 * (a + b);
        (0..y.len()).map(|i| (y[i] - t).clamp(lo[i], hi[i])).collect()
    }

    #[test]
    fn simple_cases() {
        let mut p = StepProjector::default();
        let mut y = vec![5.0, 5.0];
        assert!(p.project(&mut y, &[0.0, 0.0], &[10.0, 10.0], 4.0));
        assert_eq!(y, vec![2.0, 2.0]);
        let mut y = vec![9.0, 0.0];
        assert!(p.project(&mut y, &[0.0, 0.0], &[3.0, 10.0], 8.0));
        assert!((y[0] - 3.0).abs() < 1e-12 && (y[1] - 5.0).abs() < 1e-12);
        let mut y = vec![1.0, 1.0];
        assert!(!p.project(&mut y, &[0.0, 0.0], &[1.0, 1.0], 3.0));
    }

    #[test]
    fn fixed_variables_are_respected() {
        let mut p = StepProjector::default();
        let mut y = vec![4.0, 7.0, -3.0];
        assert!(p.project(&mut y, &[0.0, 2.0, -5.0], &[0.0, 9.0, 5.0], 6.0));
        assert_eq!(y[0], 0.0);
        assert!((y.iter().sum::<f64>() - 6.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn matches_bisection_reference(
            data in proptest::collection::vec((-50.0f64..50.0, -30.0f64..0.0, 0.0f64..30.0), 1..12),
            frac in 0.0f64..1.0,
        ) {
            let y: Vec<f64> = data.iter().map(|d| d.0).collect();
            let lo: Vec<f64> = data.iter().map(|d| d.1).collect();
            let hi: Vec<f64> = data.iter().map(|d| d.2).collect();
            let target = lo.iter().sum::<f64>() + frac * (hi.iter().sum::<f64>() - lo.iter().sum::<f64>());
            let mut x = y.clone();
            prop_assert!(StepProjector::default().project(&mut x, &lo, &hi, target));
            let r = brute(&y, &lo, &hi, target);
            prop_assert!((x.iter().sum::<f64>() - target).abs() < 1e-9);
            for i in 0..x.len() {
                prop_assert!(x[i] >= lo[i] && x[i] <= hi[i]);
                prop_assert!((x[i] - r[i]).abs() < 1e-6, "{} vs {}", x[i], r[i]);
            }
        }
    }
}
