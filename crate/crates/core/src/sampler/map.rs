//! Posterior mode by L-BFGS in the unconstrained space.

use std::collections::VecDeque;

use serde::Serialize;

use crate::density::{LogDensity, Posterior};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct MapConfig {
    pub max_iter: usize,
    /// Stop when the largest projected-gradient component falls below
    /// `tol * max(1, |log density|)`.
    pub tol: f64,
    pub memory: usize,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            max_iter: 5000,
            tol: 1e-10,
            memory: 10,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MapResult {
    /// Mode in the constrained parametrization; in inverse-gamma mode the
    /// trailing entries are the noise standard deviations.
    pub theta: Vec<f64>,
    pub log_density: f64,
    pub iterations: usize,
    /// Largest projected-gradient component at the returned point.
    pub grad_norm: f64,
    /// Coordinates that finished on a bound (flows pinned at 0 or `L`).
    pub at_bound: Vec<usize>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Raw optimizer output: the maximizer, its value, and bookkeeping.
struct Optimum {
    x: Vec<f64>,
    value: f64,
    iterations: usize,
    grad_norm: f64,
}

/// Box-constrained maximization by projected L-BFGS: the quasi-Newton
/// direction is restricted to coordinates not held by an active bound and
/// the line search projects back onto the box.
fn maximize_in_box<F>(f_and_grad: F, init: &[f64], lower: &[f64], upper: &[f64], config: &MapConfig) -> Result<Optimum>
where
    F: Fn(&[f64], &mut [f64]) -> Result<f64>,
{
    let dim = init.len();
    let project = |x: &mut [f64]| {
        for i in 0..dim {
            x[i] = x[i].clamp(lower[i], upper[i]);
        }
    };
    // minimize the negative log density
    let eval = |x: &[f64], g: &mut [f64]| -> Result<f64> {
        let f = f_and_grad(x, g)?;
        for v in g.iter_mut() {
            *v = -*v;
        }
        Ok(-f)
    };
    let held = |x: &[f64], g: &[f64], i: usize| (x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0);
    let projected = |x: &[f64], g: &[f64]| -> Vec<f64> {
        (0..dim).map(|i| if held(x, g, i) { 0.0 } else { g[i] }).collect()
    };

    let mut x = init.to_vec();
    project(&mut x);
    let mut g = vec![0.0; dim];
    let mut f = eval(&x, &mut g)?;
    if !f.is_finite() {
        return Err(Error::NonFinite { block: "initial point" });
    }
    let g0 = inf_norm(&projected(&x, &g));
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    let mut stalled = false;
    let mut x_new = vec![0.0; dim];
    let mut g_new = vec![0.0; dim];

    while iterations < config.max_iter {
        let pg = projected(&x, &g);
        if inf_norm(&pg) < config.tol * f.abs().max(1.0) {
            break;
        }
        iterations += 1;

        // two-loop recursion for d = -H g on the free coordinates
        let mut d: Vec<f64> = pg.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &d);
            for (di, yi) in d.iter_mut().zip(y) {
                *di -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            for di in d.iter_mut() {
                *di *= gamma;
            }
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            for (di, si) in d.iter_mut().zip(s) {
                *di += (a - b) * si;
            }
        }
        for i in 0..dim {
            if held(&x, &g, i) {
                d[i] = 0.0;
            }
        }
        if !(dot(&g, &d) < 0.0) {
            // not a descent direction: fall back to steepest descent
            history.clear();
            d = pg.iter().map(|v| -v).collect();
        }

        let mut step = if history.is_empty() {
            (1.0 / inf_norm(&d)).min(1.0)
        } else {
            1.0
        };
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..dim {
                x_new[i] = x[i] + step * d[i];
            }
            project(&mut x_new);
            let decrease: f64 = (0..dim).map(|i| g[i] * (x_new[i] - x[i])).sum();
            match eval(&x_new, &mut g_new) {
                Ok(f_new) if f_new.is_finite() && f_new < f && f_new <= f + 1e-4 * decrease => {
                    let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
                    let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
                    let sy = dot(&s, &y);
                    if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
                        history.push_back((s, y, 1.0 / sy));
                        if history.len() > config.memory {
                            history.pop_front();
                        }
                    }
                    x.clone_from(&x_new);
                    g.clone_from(&g_new);
                    f = f_new;
                    accepted = true;
                    break;
                }
                _ => step *= 0.5,
            }
        }
        if !accepted {
            if history.is_empty() {
                stalled = true;
                break;
            }
            history.clear();
        }
    }

    let grad_norm = inf_norm(&projected(&x, &g));
    // a stalled line search means no representable decrease remains; accept
    // it when the gradient has still shrunk by orders of magnitude
    let converged = grad_norm < config.tol * f.abs().max(1.0)
        || (stalled && grad_norm < config.tol.sqrt() * f.abs().max(g0).max(1.0));
    if !converged {
        return Err(Error::NoConvergence {
            iterations,
            grad_norm,
        });
    }
    Ok(Optimum {
        x,
        value: -f,
        iterations,
        grad_norm,
    })
}

/// Maximize `density` from `init` over its unconstrained space with L-BFGS
/// and Armijo backtracking. Returns the maximizer in `z`.
pub fn lbfgs_maximize<D: LogDensity + ?Sized>(density: &D, init: &[f64], config: &MapConfig) -> Result<(Vec<f64>, f64)> {
    let dim = density.dim();
    if init.len() != dim {
        return Err(Error::Dimension(format!("init has {} coordinates, density has {dim}", init.len())));
    }
    let lower = vec![f64::NEG_INFINITY; dim];
    let upper = vec![f64::INFINITY; dim];
    let opt = maximize_in_box(|z, g| density.log_density_and_grad(z, g), init, &lower, &upper, config)?;
    Ok((opt.x, opt.value))
}

/// Posterior mode in the original parametrization. The search runs over
/// `theta` directly with flows boxed to `[0, L]`, so modes with flows on
/// the boundary are found exactly; no change-of-variables term enters.
///
/// `init` is in the constrained parametrization; by default the prior
/// mode is used.
pub fn map_estimate(posterior: &Posterior, init: Option<&[f64]>, config: &MapConfig) -> Result<MapResult> {
    let dim = posterior.dim();
    let p = posterior.n_params();
    let prior = posterior.prior();
    let mut start = match init {
        Some(theta) => {
            if theta.len() != dim {
                return Err(Error::Dimension(format!("init has {} coordinates, density has {dim}", theta.len())));
            }
            theta.to_vec()
        }
        None => posterior.to_constrained(&posterior.mode_point()),
    };
    // noise coordinates are searched on the log scale
    for v in start[p..].iter_mut() {
        *v = v.ln();
    }
    let mut lower = vec![f64::NEG_INFINITY; dim];
    let mut upper = vec![f64::INFINITY; dim];
    for i in 0..p {
        if prior.is_flow(i) {
            lower[i] = 0.0;
            upper[i] = prior.upper;
        }
    }
    let opt = maximize_in_box(|x, g| posterior.log_density_theta(x, g), &start, &lower, &upper, config)?;
    let at_bound = (0..p)
        .filter(|&i| opt.x[i] <= lower[i] || opt.x[i] >= upper[i])
        .collect();
    let mut theta = opt.x;
    for v in theta[p..].iter_mut() {
        *v = v.exp();
    }
    Ok(MapResult {
        theta,
        log_density: opt.value,
        iterations: opt.iterations,
        grad_norm: opt.grad_norm,
        at_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::gaussian::GaussianPosterior;
    use crate::graph::SystemGraph;
    use crate::observations::{balance_rows, compile};
    use crate::priors::PriorSpec;

    struct Quadratic;

    impl LogDensity for Quadratic {
        fn dim(&self) -> usize {
            2
        }
        fn log_density_and_grad(&self, z: &[f64], grad: &mut [f64]) -> Result<f64> {
            // Rosenbrock-like but smooth and unimodal
            let (a, b) = (z[0] - 1.0, z[1] - 2.0 * z[0]);
            grad[0] = -(2.0 * a - 40.0 * b);
            grad[1] = -(20.0 * b);
            Ok(-(a * a + 10.0 * b * b))
        }
    }

    #[test]
    fn finds_simple_optimum() {
        let (z, _) = lbfgs_maximize(&Quadratic, &[-3.0, 5.0], &MapConfig::default()).unwrap();
        assert!((z[0] - 1.0).abs() < 1e-8 && (z[1] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn quadratic_posterior_matches_gaussian() {
        let g = SystemGraph::build(&fixtures::si_example_system()).unwrap();
        let (rows, prior) = fixtures::si_conjugate(&g).unwrap();
        let m = compile(&g, &rows).unwrap();
        let gauss = GaussianPosterior::from_model(&prior, &m).unwrap();
        let upper = prior.upper;
        let post = Posterior::with_model_noise(prior, &m, upper).unwrap();
        let r = map_estimate(&post, None, &MapConfig::default()).unwrap();
        for i in 0..12 {
            assert!((r.theta[i] - gauss.mean[i]).abs() < 1e-6, "{i}: {} vs {}", r.theta[i], gauss.mean[i]);
        }
    }

    #[test]
    fn prior_only_mode() {
        let g = SystemGraph::build(&fixtures::si_example_system()).unwrap();
        let m = compile(&g, &[]).unwrap();
        let prior = PriorSpec::uniform(g.index(), (-2.0, 5.0), (3.0, 2.0), 1e4).unwrap();
        let post = Posterior::with_model_noise(prior.clone(), &m, 1e4).unwrap();
        let r = map_estimate(&post, None, &MapConfig::default()).unwrap();
        for (a, b) in r.theta.iter().zip(prior.mode()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn si_mode_fits_rows() {
        let g = SystemGraph::build(&fixtures::si_example_system()).unwrap();
        let data = fixtures::si_example_rows(1.0);
        let mut rows = data.clone();
        rows.extend(balance_rows(&g, &Default::default(), 0.5).unwrap());
        let m = compile(&g, &rows).unwrap();
        let prior = PriorSpec::uniform(g.index(), (1.0, 10.0), (1.0, 10.0), 1e4).unwrap();
        let post = Posterior::with_model_noise(prior, &m, 1e4).unwrap();
        let r = map_estimate(&post, None, &MapConfig::default()).unwrap();
        let fitted = m.row_means(&r.theta).unwrap();
        // B holds no stock, so balance forces U_{4,B} ~ U_{B,C} and hence
        // S_C ~ 0 against an observed 11.6; the flow rows are still fit
        for k in [0, 2, 3, 4] {
            assert!((fitted[k] - m.y[k]).abs() < 3.0, "row {k}");
        }
        // flows pinned at zero sit on an active bound: moving them inward
        // lowers the density
        assert!(!r.at_bound.is_empty());
        let mut grad = vec![0.0; 12];
        let f0 = post.log_density_theta(&r.theta, &mut grad).unwrap();
        for i in 2..12 {
            let mut x = r.theta.clone();
            x[i] += 0.01;
            assert!(post.log_density_theta(&x, &mut grad).unwrap() < f0, "{i}");
        }
    }
}
