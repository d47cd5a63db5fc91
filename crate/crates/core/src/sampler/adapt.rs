//! Warmup: dual-averaging step size and windowed diagonal-metric estimation.

use rand::Rng;

use super::nuts::{leapfrog, sample_momentum, State};
use crate::density::LogDensity;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct DualAveraging {
    pub delta: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub t0: f64,
    mu: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

impl DualAveraging {
    pub fn new(delta: f64) -> Self {
        Self {
            delta,
            gamma: 0.05,
            kappa: 0.75,
            t0: 10.0,
            mu: 0.0,
            counter: 0.0,
            s_bar: 0.0,
            x_bar: 0.0,
        }
    }

    /// Restart around `log(10 * eps)`.
    pub fn restart(&mut self, eps: f64) {
        self.mu = (10.0 * eps).ln();
        self.counter = 0.0;
        self.s_bar = 0.0;
        self.x_bar = 0.0;
    }

    /// Update from one transition's acceptance statistic; returns the next
    /// step size.
    pub fn learn(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let stat = accept_stat.min(1.0);
        let eta = 1.0 / (self.counter + self.t0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - stat);
        let x = self.mu - self.s_bar * self.counter.sqrt() / self.gamma;
        let x_eta = self.counter.powf(-self.kappa);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }

    /// Step size to freeze at the end of warmup.
    pub fn final_step_size(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Metric adaptation windows: a fast initial buffer, a series of doubling
/// slow windows, and a terminal buffer.
#[derive(Clone, Debug)]
pub struct Windows {
    num_warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_size: usize,
    next_window: usize,
    counter: usize,
    enabled: bool,
}

impl Windows {
    pub fn new(num_warmup: usize) -> Self {
        let (mut init_buffer, mut term_buffer, mut base) = (75, 50, 25);
        let enabled = num_warmup >= 20;
        if enabled && init_buffer + term_buffer + base > num_warmup {
            init_buffer = (0.15 * num_warmup as f64) as usize;
            term_buffer = (0.1 * num_warmup as f64) as usize;
            base = num_warmup - (init_buffer + term_buffer);
        }
        Self {
            num_warmup,
            init_buffer,
            term_buffer,
            window_size: base,
            next_window: init_buffer + base - 1,
            counter: 0,
            enabled,
        }
    }

    fn in_window(&self) -> bool {
        self.counter >= self.init_buffer
            && self.counter < self.num_warmup - self.term_buffer
            && self.counter != self.num_warmup
    }

    fn window_end(&self) -> bool {
        self.counter == self.next_window && self.counter != self.num_warmup
    }

    fn compute_next(&mut self) {
        let last = self.num_warmup - self.term_buffer - 1;
        if self.next_window == last {
            return;
        }
        self.window_size *= 2;
        self.next_window = self.counter + self.window_size;
        if self.next_window != last {
            let boundary = self.next_window + 2 * self.window_size;
            if boundary >= self.num_warmup - self.term_buffer {
                self.next_window = last;
            }
        }
    }
}

/// Welford running variance.
#[derive(Clone, Debug)]
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn add(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for i in 0..x.len() {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / n;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    fn variance(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2.iter().map(|m| m / (n - 1.0)).collect()
    }

    fn restart(&mut self) {
        *self = Self::new(self.mean.len());
    }
}

#[derive(Clone, Debug)]
pub struct MetricAdaptation {
    windows: Windows,
    estimator: Welford,
}

impl MetricAdaptation {
    pub fn new(num_warmup: usize, dim: usize) -> Self {
        Self {
            windows: Windows::new(num_warmup),
            estimator: Welford::new(dim),
        }
    }

    /// Feed one warmup position; returns true when `inv_metric` was updated.
    pub fn learn(&mut self, inv_metric: &mut [f64], q: &[f64]) -> bool {
        if !self.windows.enabled {
            return false;
        }
        if self.windows.in_window() {
            self.estimator.add(q);
        }
        if self.windows.window_end() {
            self.windows.compute_next();
            let n = self.estimator.n as f64;
            for (m, v) in inv_metric.iter_mut().zip(self.estimator.variance()) {
                *m = (n / (n + 5.0)) * v + 1e-3 * (5.0 / (n + 5.0));
            }
            self.estimator.restart();
            self.windows.counter += 1;
            return true;
        }
        self.windows.counter += 1;
        false
    }
}

/// Double or halve `eps` until one leapfrog step crosses an acceptance
/// probability of 0.8.
pub fn find_reasonable_step_size<D: LogDensity + ?Sized, R: Rng + ?Sized>(
    density: &D,
    rng: &mut R,
    start: &State,
    mut eps: f64,
    inv_metric: &[f64],
) -> Result<f64> {
    let target = 0.8f64.ln();
    let mut z = start.clone();
    sample_momentum(rng, &mut z, inv_metric);
    let h0 = z.hamiltonian(inv_metric);
    leapfrog(density, &mut z, eps, inv_metric);
    let delta_h = h0 - z.hamiltonian(inv_metric);
    let up = delta_h > target;
    loop {
        let mut z = start.clone();
        sample_momentum(rng, &mut z, inv_metric);
        let h0 = z.hamiltonian(inv_metric);
        leapfrog(density, &mut z, eps, inv_metric);
        let delta_h = h0 - z.hamiltonian(inv_metric);
        if up && !(delta_h > target) {
            break;
        }
        if !up && !(delta_h < target) {
            break;
        }
        eps = if up { 2.0 * eps } else { 0.5 * eps };
        if eps > 1e7 {
            return Err(Error::Sampler {
                chain: 0,
                reason: "step size grew without bound; is the density improper?".into(),
            });
        }
        if eps == 0.0 {
            return Err(Error::Sampler {
                chain: 0,
                reason: "step size collapsed to zero".into(),
            });
        }
    }
    Ok(eps)
}
