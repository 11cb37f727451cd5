//! Derivative-free minimisation.

use argmin::core::{CostFunction, Executor};
use argmin::solver::neldermead::NelderMead;

struct Objective<F>(F);

impl<F: Fn(&[f64]) -> f64> CostFunction for Objective<F> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Vec<f64>) -> Result<f64, argmin::core::Error> {
        let y = (self.0)(x);
        Ok(if y.is_nan() { f64::INFINITY } else { y })
    }
}

/// Nelder-Mead simplex search from `x0` with initial step sizes `step`,
/// stopping once the spread of simplex values falls below `sd_tol`.
/// Returns the best point and its value.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: F,
    x0: &[f64],
    step: &[f64],
    max_iters: u64,
    sd_tol: f64,
) -> (Vec<f64>, f64) {
    let mut simplex = vec![x0.to_vec()];
    for (i, s) in step.iter().enumerate() {
        let mut v = x0.to_vec();
        v[i] += s;
        simplex.push(v);
    }
    let objective = Objective(f);
    let start = objective.cost(&x0.to_vec()).unwrap_or(f64::INFINITY);
    let solver = NelderMead::new(simplex).with_sd_tolerance(sd_tol).expect("tolerance is non-negative");
    match Executor::new(objective, solver).configure(|s| s.max_iters(max_iters)).run() {
        Ok(res) => match res.state.best_param {
            Some(p) => (p, res.state.best_cost),
            None => (x0.to_vec(), start),
        },
        Err(_) => (x0.to_vec(), start),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_rosenbrock_minimum() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let (x, v) = nelder_mead(f, &[-1.2, 1.0], &[0.5, 0.5], 20_000, 1e-15);
        assert!(v < 1e-10, "{v}");
        assert!((x[0] - 1.0).abs() < 1e-4 && (x[1] - 1.0).abs() < 1e-4);
    }
}
