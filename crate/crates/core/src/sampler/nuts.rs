//! Multinomial NUTS with a diagonal metric and the generalized no-U-turn
//! criterion, including the extra checks across subtree boundaries.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::density::LogDensity;
use crate::special::log_sum_exp;

pub const MAX_DELTA_H: f64 = 1000.0;

#[derive(Clone, Debug)]
pub struct State {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub grad: Vec<f64>,
    pub logp: f64,
}

impl State {
    pub fn new<D: LogDensity + ?Sized>(density: &D, q: Vec<f64>) -> Self {
        let mut grad = vec![0.0; q.len()];
        let logp = match density.log_density_and_grad(&q, &mut grad) {
            Ok(v) if v.is_finite() && grad.iter().all(|g| g.is_finite()) => v,
            _ => f64::NEG_INFINITY,
        };
        let p = vec![0.0; q.len()];
        Self { q, p, grad, logp }
    }

    fn kinetic(&self, inv_metric: &[f64]) -> f64 {
        0.5 * self
            .p
            .iter()
            .zip(inv_metric)
            .map(|(p, m)| p * p * m)
            .sum::<f64>()
    }

    pub fn hamiltonian(&self, inv_metric: &[f64]) -> f64 {
        let h = -self.logp + self.kinetic(inv_metric);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    pub fn p_sharp(&self, inv_metric: &[f64]) -> Vec<f64> {
        self.p.iter().zip(inv_metric).map(|(p, m)| p * m).collect()
    }
}

/// Draw momentum `p ~ N(0, M)` with `M = diag(1 / inv_metric)`.
pub fn sample_momentum<R: Rng + ?Sized>(rng: &mut R, state: &mut State, inv_metric: &[f64]) {
    for (p, m) in state.p.iter_mut().zip(inv_metric) {
        let n: f64 = rng.sample(StandardNormal);
        *p = n / m.sqrt();
    }
}

/// One leapfrog step of size `eps` (negative for backward integration).
pub fn leapfrog<D: LogDensity + ?Sized>(density: &D, state: &mut State, eps: f64, inv_metric: &[f64]) {
    if !state.logp.is_finite() {
        return;
    }
    let half = 0.5 * eps;
    for (p, g) in state.p.iter_mut().zip(&state.grad) {
        *p += half * g;
    }
    for ((q, p), m) in state.q.iter_mut().zip(&state.p).zip(inv_metric) {
        *q += eps * p * m;
    }
    match density.log_density_and_grad(&state.q, &mut state.grad) {
        Ok(v) if v.is_finite() && state.grad.iter().all(|g| g.is_finite()) => {
            state.logp = v;
            for (p, g) in state.p.iter_mut().zip(&state.grad) {
                *p += half * g;
            }
        }
        _ => {
            state.logp = f64::NEG_INFINITY;
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Transition {
    pub accept_stat: f64,
    pub tree_depth: usize,
    pub n_leapfrog: usize,
    pub divergent: bool,
    pub energy: f64,
}

struct Tree<'a, D: ?Sized> {
    density: &'a D,
    inv_metric: &'a [f64],
    eps: f64,
    h0: f64,
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
}

fn add(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

fn criterion(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    let dot = |a: &[f64]| a.iter().zip(rho).map(|(x, y)| x * y).sum::<f64>();
    dot(p_sharp_plus) > 0.0 && dot(p_sharp_minus) > 0.0
}

impl<D: LogDensity + ?Sized> Tree<'_, D> {
    #[allow(clippy::too_many_arguments)]
    fn build<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        z: &mut State,
        depth: usize,
        sign: f64,
        z_propose: &mut State,
        p_sharp_beg: &mut Vec<f64>,
        p_sharp_end: &mut Vec<f64>,
        rho: &mut [f64],
        p_beg: &mut Vec<f64>,
        p_end: &mut Vec<f64>,
        log_sum_weight: &mut f64,
    ) -> bool {
        if depth == 0 {
            leapfrog(self.density, z, sign * self.eps, self.inv_metric);
            self.n_leapfrog += 1;
            let h = z.hamiltonian(self.inv_metric);
            if h - self.h0 > MAX_DELTA_H {
                self.divergent = true;
            }
            *log_sum_weight = log_sum_exp(*log_sum_weight, self.h0 - h);
            self.sum_metro_prob += if self.h0 - h > 0.0 {
                1.0
            } else {
                (self.h0 - h).exp()
            };
            z_propose.clone_from(z);
            *p_sharp_beg = z.p_sharp(self.inv_metric);
            p_sharp_end.clone_from(p_sharp_beg);
            add(rho, &z.p);
            p_beg.clone_from(&z.p);
            p_end.clone_from(p_beg);
            return !self.divergent;
        }

        let dim = z.q.len();
        // initial subtree
        let mut lsw_init = f64::NEG_INFINITY;
        let mut p_init_end = vec![0.0; dim];
        let mut p_sharp_init_end = vec![0.0; dim];
        let mut rho_init = vec![0.0; dim];
        if !self.build(
            rng,
            z,
            depth - 1,
            sign,
            z_propose,
            p_sharp_beg,
            &mut p_sharp_init_end,
            &mut rho_init,
            p_beg,
            &mut p_init_end,
            &mut lsw_init,
        ) {
            return false;
        }

        // final subtree
        let mut z_propose_final = z.clone();
        let mut lsw_final = f64::NEG_INFINITY;
        let mut p_final_beg = vec![0.0; dim];
        let mut p_sharp_final_beg = vec![0.0; dim];
        let mut rho_final = vec![0.0; dim];
        if !self.build(
            rng,
            z,
            depth - 1,
            sign,
            &mut z_propose_final,
            &mut p_sharp_final_beg,
            p_sharp_end,
            &mut rho_final,
            &mut p_final_beg,
            p_end,
            &mut lsw_final,
        ) {
            return false;
        }

        // uniform multinomial choice within the subtree
        let lsw_subtree = log_sum_exp(lsw_init, lsw_final);
        *log_sum_weight = log_sum_exp(*log_sum_weight, lsw_subtree);
        if lsw_final > lsw_subtree {
            *z_propose = z_propose_final;
        } else {
            let accept = (lsw_final - lsw_subtree).exp();
            if rng.random::<f64>() < accept {
                *z_propose = z_propose_final;
            }
        }

        let mut rho_subtree = rho_init.clone();
        add(&mut rho_subtree, &rho_final);
        add(rho, &rho_subtree);

        let mut persist = criterion(p_sharp_beg, p_sharp_end, &rho_subtree);
        let mut rho_ext = rho_init;
        add(&mut rho_ext, &p_final_beg);
        persist &= criterion(p_sharp_beg, &p_sharp_final_beg, &rho_ext);
        let mut rho_ext = rho_final;
        add(&mut rho_ext, &p_init_end);
        persist &= criterion(&p_sharp_init_end, p_sharp_end, &rho_ext);
        persist
    }
}

/// One NUTS transition from `current`, which is replaced by the new state.
pub fn transition<D: LogDensity + ?Sized, R: Rng + ?Sized>(
    density: &D,
    rng: &mut R,
    current: &mut State,
    eps: f64,
    inv_metric: &[f64],
    max_depth: usize,
) -> Transition {
    let dim = current.q.len();
    sample_momentum(rng, current, inv_metric);
    let mut z_fwd = current.clone();
    let mut z_bck = current.clone();
    let mut z_sample = current.clone();
    let mut z_propose = current.clone();

    let mut p_fwd_fwd = current.p.clone();
    let mut p_sharp_fwd_fwd = current.p_sharp(inv_metric);
    let mut p_fwd_bck = current.p.clone();
    let mut p_sharp_fwd_bck = p_sharp_fwd_fwd.clone();
    let mut p_bck_fwd = current.p.clone();
    let mut p_sharp_bck_fwd = p_sharp_fwd_fwd.clone();
    let mut p_bck_bck = current.p.clone();
    let mut p_sharp_bck_bck = p_sharp_fwd_fwd.clone();

    let mut rho = current.p.clone();
    let mut log_sum_weight = 0.0;
    let h0 = current.hamiltonian(inv_metric);

    let mut tree = Tree {
        density,
        inv_metric,
        eps,
        h0,
        n_leapfrog: 0,
        sum_metro_prob: 0.0,
        divergent: false,
    };
    let mut depth = 0;

    while depth < max_depth {
        let mut rho_fwd = vec![0.0; dim];
        let mut rho_bck = vec![0.0; dim];
        let mut lsw_subtree = f64::NEG_INFINITY;
        let valid = if rng.random::<f64>() > 0.5 {
            rho_bck.clone_from(&rho);
            p_bck_fwd.clone_from(&p_fwd_fwd);
            p_sharp_bck_fwd.clone_from(&p_sharp_fwd_fwd);
            let mut z = z_fwd.clone();
            let ok = tree.build(
                rng,
                &mut z,
                depth,
                1.0,
                &mut z_propose,
                &mut p_sharp_fwd_bck,
                &mut p_sharp_fwd_fwd,
                &mut rho_fwd,
                &mut p_fwd_bck,
                &mut p_fwd_fwd,
                &mut lsw_subtree,
            );
            z_fwd = z;
            ok
        } else {
            rho_fwd.clone_from(&rho);
            p_fwd_bck.clone_from(&p_bck_bck);
            p_sharp_fwd_bck.clone_from(&p_sharp_bck_bck);
            let mut z = z_bck.clone();
            let ok = tree.build(
                rng,
                &mut z,
                depth,
                -1.0,
                &mut z_propose,
                &mut p_sharp_bck_fwd,
                &mut p_sharp_bck_bck,
                &mut rho_bck,
                &mut p_bck_fwd,
                &mut p_bck_bck,
                &mut lsw_subtree,
            );
            z_bck = z;
            ok
        };
        if !valid {
            break;
        }
        depth += 1;

        // biased progressive sampling at the top level
        if lsw_subtree > log_sum_weight {
            z_sample.clone_from(&z_propose);
        } else {
            let accept = (lsw_subtree - log_sum_weight).exp();
            if rng.random::<f64>() < accept {
                z_sample.clone_from(&z_propose);
            }
        }
        log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);

        rho.clone_from(&rho_bck);
        add(&mut rho, &rho_fwd);

        let mut persist = criterion(&p_sharp_bck_bck, &p_sharp_fwd_fwd, &rho);
        let mut rho_ext = rho_bck.clone();
        add(&mut rho_ext, &p_fwd_bck);
        persist &= criterion(&p_sharp_bck_bck, &p_sharp_fwd_bck, &rho_ext);
        let mut rho_ext = rho_fwd.clone();
        add(&mut rho_ext, &p_bck_fwd);
        persist &= criterion(&p_sharp_bck_fwd, &p_sharp_fwd_fwd, &rho_ext);
        if !persist {
            break;
        }
    }

    let n_leapfrog = tree.n_leapfrog;
    let accept_stat = if n_leapfrog > 0 {
        tree.sum_metro_prob / n_leapfrog as f64
    } else {
        0.0
    };
    let energy = z_sample.hamiltonian(inv_metric);
    *current = z_sample;
    Transition {
        accept_stat,
        tree_depth: depth,
        n_leapfrog,
        divergent: tree.divergent,
        energy,
    }
}
