//! Derivative-free simplex minimisation (Nelder–Mead) with restarts.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct NelderMead {
    /// Initial simplex offset along each coordinate.
    pub step: Vec<f64>,
    pub max_iterations: usize,
    /// Stop when the spread of objective values over the simplex falls below
    /// `f_tol · (|f_best| + f_tol)` or the simplex diameter below `x_tol`.
    pub f_tol: f64,
    pub x_tol: f64,
    /// Rebuild the simplex around the optimum until a restart no longer improves it.
    pub max_restarts: usize,
}

impl NelderMead {
    pub fn new(step: Vec<f64>) -> Self {
        NelderMead {
            step,
            max_iterations: 20_000,
            f_tol: 1e-14,
            x_tol: 1e-10,
            max_restarts: 8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub point: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

impl NelderMead {
    /// Minimises `f` from `start`. Non-finite objective values are treated as +∞.
    pub fn minimize<F>(&self, f: F, start: &[f64]) -> Result<Minimum>
    where
        F: Fn(&[f64]) -> f64,
    {
        let dim = start.len();
        if dim == 0 || self.step.len() != dim {
            return Err(Error::InvalidInput(
                "simplex step must match a non-empty start point".into(),
            ));
        }
        let eval = |x: &[f64]| {
            let v = f(x);
            if v.is_finite() {
                v
            } else {
                f64::INFINITY
            }
        };

        let mut best = start.to_vec();
        let mut best_value = eval(&best);
        let mut total_iterations = 0;
        let mut restarts = 0;
        loop {
            let (point, value, iters, converged) = self.run(&eval, &best, best_value);
            total_iterations += iters;
            let improved = value < best_value - self.f_tol * (best_value.abs() + self.f_tol);
            if value <= best_value {
                best = point;
                best_value = value;
            }
            if !converged {
                return Err(Error::NoConvergence {
                    iterations: total_iterations,
                    best_point: best,
                    best_value,
                });
            }
            if !improved || restarts >= self.max_restarts {
                break;
            }
            restarts += 1;
        }
        Ok(Minimum {
            point: best,
            value: best_value,
            iterations: total_iterations,
        })
    }

    fn run<F>(&self, eval: &F, start: &[f64], start_value: f64) -> (Vec<f64>, f64, usize, bool)
    where
        F: Fn(&[f64]) -> f64,
    {
        let dim = start.len();
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
        simplex.push((start.to_vec(), start_value));
        for i in 0..dim {
            let mut x = start.to_vec();
            x[i] += self.step[i];
            let v = eval(&x);
            simplex.push((x, v));
        }

        let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
        for iter in 0..self.max_iterations {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let f_best = simplex[0].1;
            let f_worst = simplex[dim].1;
            let diameter = simplex[1..]
                .iter()
                .map(|(x, _)| {
                    x.iter()
                        .zip(&simplex[0].0)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max);
            let spread_ok = (f_worst - f_best).abs() <= self.f_tol * (f_best.abs() + self.f_tol);
            if spread_ok || diameter <= self.x_tol {
                let (x, v) = simplex.swap_remove(0);
                return (x, v, iter, true);
            }

            let mut centroid = vec![0.0; dim];
            for (x, _) in &simplex[..dim] {
                for (c, xi) in centroid.iter_mut().zip(x) {
                    *c += xi / dim as f64;
                }
            }
            let along = |t: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&simplex[dim].0)
                    .map(|(c, w)| c + t * (w - c))
                    .collect()
            };

            let reflected = along(-alpha);
            let f_r = eval(&reflected);
            if f_r < f_best {
                let expanded = along(-gamma);
                let f_e = eval(&expanded);
                simplex[dim] = if f_e < f_r {
                    (expanded, f_e)
                } else {
                    (reflected, f_r)
                };
                continue;
            }
            if f_r < simplex[dim - 1].1 {
                simplex[dim] = (reflected, f_r);
                continue;
            }
            let (contracted, f_c) = if f_r < f_worst {
                let x = along(-rho);
                let v = eval(&x);
                (x, v)
            } else {
                let x = along(rho);
                let v = eval(&x);
                (x, v)
            };
            if f_c < f_worst.min(f_r) {
                simplex[dim] = (contracted, f_c);
                continue;
            }
            let anchor = simplex[0].0.clone();
            for (x, v) in simplex.iter_mut().skip(1) {
                for (xi, a) in x.iter_mut().zip(&anchor) {
                    *xi = a + sigma * (*xi - a);
                }
                *v = eval(x);
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (x, v) = simplex.swap_remove(0);
        (x, v, self.max_iterations, false)
    }
}
