//! Log posterior of the full model over an unconstrained parametrization.
//!
//! Coordinates: stocks are used as is, each flow `U in (0, L)` maps to
//! `z = logit(U / L)`, and in inverse-gamma mode each row noise SD `tau`
//! appends `z = ln tau`.

use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::observations::{CompiledModel, RatioSpec, RowClass, RATIO_EPS};
use crate::priors::{NoisePriorSpec, PriorSpec};
use crate::special::{log_norm_interval, truncation_term, LN_SQRT_2PI};

/// A differentiable log density on `R^dim`.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Log density at `z`; writes the gradient into `grad`.
    fn log_density_and_grad(&self, z: &[f64], grad: &mut [f64]) -> Result<f64>;

    /// Map an unconstrained point to the reported parameters.
    fn constrain(&self, z: &[f64]) -> Vec<f64> {
        z.to_vec()
    }

    fn param_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("x{i}")).collect()
    }

    /// Starting point before jitter.
    fn initial_point(&self) -> Vec<f64> {
        vec![0.0; self.dim()]
    }
}

fn log_sigmoid(z: f64) -> f64 {
    // -softplus(-z)
    if z > 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `L * sigmoid(z)`.
pub fn flow_from_z(z: f64, upper: f64) -> f64 {
    upper * sigmoid(z)
}

/// Inverse of [`flow_from_z`].
pub fn z_from_flow(u: f64, upper: f64) -> f64 {
    u.ln() - (upper - u).ln()
}

/// `ln dU/dz` for the flow transform.
pub fn flow_log_jacobian(z: f64, upper: f64) -> f64 {
    upper.ln() + log_sigmoid(z) + log_sigmoid(-z)
}

#[derive(Clone, Debug)]
struct LinRow {
    cols: Vec<(usize, f64)>,
    y: f64,
    class: RowClass,
}

#[derive(Clone, Debug)]
enum Noise {
    Fixed(Vec<f64>),
    InverseGamma { a: Vec<f64>, b: Vec<f64>, log_norm: Vec<f64> },
}

/// Per-block contributions to the log posterior.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Blocks {
    pub prior: f64,
    pub stock_lik: f64,
    pub flow_lik: f64,
    pub ratio_lik: f64,
    pub mass_balance_lik: f64,
    pub noise_prior: f64,
    pub jacobian: f64,
}

impl Blocks {
    pub fn total(&self) -> f64 {
        self.prior
            + self.stock_lik
            + self.flow_lik
            + self.ratio_lik
            + self.mass_balance_lik
            + self.noise_prior
            + self.jacobian
    }

    fn check(&self) -> Result<()> {
        for (block, v) in [
            ("prior", self.prior),
            ("stock likelihood", self.stock_lik),
            ("flow likelihood", self.flow_lik),
            ("ratio likelihood", self.ratio_lik),
            ("mass-balance likelihood", self.mass_balance_lik),
            ("noise prior", self.noise_prior),
            ("jacobian", self.jacobian),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFinite { block });
            }
        }
        Ok(())
    }

    fn lik_mut(&mut self, class: RowClass) -> &mut f64 {
        match class {
            RowClass::Stock => &mut self.stock_lik,
            RowClass::Flow => &mut self.flow_lik,
            RowClass::Ratio => &mut self.ratio_lik,
            RowClass::MassBalance => &mut self.mass_balance_lik,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LogDensityReport {
    pub log_posterior: f64,
    pub gradient: Vec<f64>,
    pub blocks: Blocks,
}

/// Joint posterior of the truncated-normal MFA model.
#[derive(Clone, Debug)]
pub struct Posterior {
    prior: PriorSpec,
    prior_log_norm: Vec<f64>,
    flow_obs_upper: f64,
    rows: Vec<LinRow>,
    ratios: Vec<(RatioSpec, f64)>,
    noise: Noise,
    names: Vec<String>,
    row_labels: Vec<String>,
    jacobian: bool,
}

impl Posterior {
    /// `noise` must have one entry per compiled row (linear rows first).
    pub fn new(
        prior: PriorSpec,
        model: &CompiledModel,
        noise: &NoisePriorSpec,
        flow_obs_upper: f64,
    ) -> Result<Self> {
        let p = model.n_params();
        if prior.len() != p {
            return Err(Error::Dimension(format!(
                "prior covers {} variables, model has {p}",
                prior.len()
            )));
        }
        if noise.len() != model.n_rows() {
            return Err(Error::Dimension(format!(
                "noise has {} entries for {} rows",
                noise.len(),
                model.n_rows()
            )));
        }
        noise.validate()?;
        if !(flow_obs_upper > 0.0) {
            return Err(Error::NonPositive(flow_obs_upper));
        }
        let n_lin = model.n_linear();
        let mut rows = Vec::with_capacity(n_lin);
        for r in 0..n_lin {
            let cols: Vec<(usize, f64)> = model
                .x
                .row(r)
                .iter()
                .enumerate()
                .filter(|(_, c)| **c != 0.0)
                .map(|(j, c)| (j, *c))
                .collect();
            let class = model.classes[r];
            let y = model.y[r];
            if class == RowClass::Flow && !(0.0..=flow_obs_upper).contains(&y) {
                return Err(Error::OutsideSupport(format!(
                    "flow observation {y} on row {r} is outside [0, {flow_obs_upper}]"
                )));
            }
            rows.push(LinRow { cols, y, class });
        }
        let ratios = model
            .ratio_specs
            .iter()
            .enumerate()
            .map(|(k, s)| (s.clone(), model.y[n_lin + k]))
            .collect();
        let noise = match noise {
            NoisePriorSpec::PlugIn { tau } => Noise::Fixed(tau.clone()),
            NoisePriorSpec::InverseGamma { a, b } => Noise::InverseGamma {
                a: a.clone(),
                b: b.clone(),
                log_norm: a.iter().zip(b).map(|(a, b)| a * b.ln() - ln_gamma(*a)).collect(),
            },
        };
        let prior_log_norm = (0..p)
            .map(|i| {
                let (m, s) = (prior.mu[i], prior.sigma[i]);
                let base = -LN_SQRT_2PI - s.ln();
                if prior.is_flow(i) {
                    base - log_norm_interval(-m / s, (prior.upper - m) / s)
                } else {
                    base
                }
            })
            .collect();
        let mut names: Vec<String> = (0..p).map(|i| format!("x{i}")).collect();
        if let Noise::InverseGamma { .. } = noise {
            names.extend(model.labels.iter().map(|l| format!("tau:{l}")));
        }
        Ok(Self {
            prior,
            prior_log_norm,
            flow_obs_upper,
            rows,
            ratios,
            noise,
            names,
            row_labels: model.labels.clone(),
            jacobian: true,
        })
    }

    /// Plug-in noise taken from the compiled model's `tau`.
    pub fn with_model_noise(prior: PriorSpec, model: &CompiledModel, flow_obs_upper: f64) -> Result<Self> {
        let noise = NoisePriorSpec::PlugIn {
            tau: model.tau.iter().copied().collect(),
        };
        Self::new(prior, model, &noise, flow_obs_upper)
    }

    /// Variable names used for reporting; the first `n_params()` entries
    /// are the model variables.
    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_params() {
            return Err(Error::Dimension(format!(
                "{} names for {} variables",
                names.len(),
                self.n_params()
            )));
        }
        let p = self.n_params();
        self.names.splice(0..p, names);
        Ok(self)
    }

    /// Include (`true`, default) or drop the change-of-variables term. The
    /// mode of the density without it is the mode in the original
    /// parametrization.
    pub fn with_jacobian(mut self, jacobian: bool) -> Self {
        self.jacobian = jacobian;
        self
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    pub fn flow_obs_upper(&self) -> f64 {
        self.flow_obs_upper
    }

    pub fn row_labels(&self) -> &[String] {
        &self.row_labels
    }

    /// Number of model variables `p` (excluding noise coordinates).
    pub fn n_params(&self) -> usize {
        self.prior.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len() + self.ratios.len()
    }

    pub fn samples_noise(&self) -> bool {
        matches!(self.noise, Noise::InverseGamma { .. })
    }

    /// Constrained `theta` (and `tau`, in inverse-gamma mode) from `z`.
    pub fn to_constrained(&self, z: &[f64]) -> Vec<f64> {
        let p = self.n_params();
        let mut out = Vec::with_capacity(z.len());
        for i in 0..p {
            out.push(if self.prior.is_flow(i) {
                flow_from_z(z[i], self.prior.upper)
            } else {
                z[i]
            });
        }
        out.extend(z[p..].iter().map(|v| v.exp()));
        out
    }

    /// Inverse of [`Posterior::to_constrained`].
    pub fn to_unconstrained(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let p = self.n_params();
        if theta.len() != self.dim() {
            return Err(Error::Dimension(format!("{} values for {} coordinates", theta.len(), self.dim())));
        }
        let mut z = Vec::with_capacity(theta.len());
        for (i, &v) in theta.iter().enumerate() {
            if i < p && self.prior.is_flow(i) {
                if !(v > 0.0 && v < self.prior.upper) {
                    return Err(Error::OutsideSupport(format!(
                        "flow {} = {v} outside (0, {})",
                        self.names[i], self.prior.upper
                    )));
                }
                z.push(z_from_flow(v, self.prior.upper));
            } else if i < p {
                z.push(v);
            } else {
                if !(v > 0.0) {
                    return Err(Error::OutsideSupport(format!("noise sd {v}")));
                }
                z.push(v.ln());
            }
        }
        Ok(z)
    }

    /// Prior mode in `z`, with flows kept strictly inside `(0, L)` and
    /// noise at its plug-in value.
    pub fn mode_point(&self) -> Vec<f64> {
        let upper = self.prior.upper;
        let mut z = Vec::with_capacity(self.dim());
        for (i, m) in self.prior.mode().into_iter().enumerate() {
            if self.prior.is_flow(i) {
                let eps = 1e-3 * self.prior.sigma[i].min(upper);
                z.push(z_from_flow(m.clamp(eps, upper - eps), upper));
            } else {
                z.push(m);
            }
        }
        if let Noise::InverseGamma { a, b, .. } = &self.noise {
            z.extend(a.iter().zip(b).map(|(a, b)| (b / (a - 1.0)).ln()));
        }
        debug_assert_eq!(z.len(), self.dim());
        z
    }

    /// Full evaluation with the per-block breakdown.
    pub fn report(&self, z: &[f64]) -> Result<LogDensityReport> {
        let mut gradient = vec![0.0; self.dim()];
        let blocks = self.evaluate(z, &mut gradient)?;
        blocks.check()?;
        if gradient.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { block: "gradient" });
        }
        Ok(LogDensityReport {
            log_posterior: blocks.total(),
            gradient,
            blocks,
        })
    }

    /// Log density in the original parametrization at `x = [theta; ln tau]`
    /// (noise coordinates only in inverse-gamma mode), without any
    /// change-of-variables term. Flows may sit on the bounds `0` and `L`.
    pub fn log_density_theta(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.check_dims(x, grad)?;
        let p = self.n_params();
        let (theta, z_noise) = x.split_at(p);
        let (g_theta, g_noise) = grad.split_at_mut(p);
        let blocks = self.evaluate_at(theta, z_noise, g_theta, g_noise, false)?;
        Ok(blocks.total())
    }

    fn check_dims(&self, z: &[f64], grad: &[f64]) -> Result<()> {
        if z.len() != self.dim() || grad.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "point has {} coordinates, density has {}",
                z.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    fn evaluate(&self, z: &[f64], grad: &mut [f64]) -> Result<Blocks> {
        self.check_dims(z, grad)?;
        let p = self.n_params();
        let upper = self.prior.upper;

        // constrained values and dtheta/dz
        let mut theta = vec![0.0; p];
        let mut dtheta = vec![1.0; p];
        let mut jac = 0.0;
        let mut jac_grad = vec![0.0; p];
        for i in 0..p {
            if self.prior.is_flow(i) {
                let s = sigmoid(z[i]);
                theta[i] = upper * s;
                dtheta[i] = upper * s * sigmoid(-z[i]);
                if self.jacobian {
                    jac += flow_log_jacobian(z[i], upper);
                    jac_grad[i] = 1.0 - 2.0 * s;
                }
            } else {
                theta[i] = z[i];
            }
        }

        let (g, g_noise) = grad.split_at_mut(p);
        let mut blocks = self.evaluate_at(&theta, &z[p..], g, g_noise, self.jacobian)?;
        blocks.jacobian += jac;
        for i in 0..p {
            g[i] = g[i] * dtheta[i] + jac_grad[i];
        }
        Ok(blocks)
    }

    /// Everything except the flow transform: `g_theta` receives the
    /// gradient with respect to `theta`, `g_noise` with respect to `ln tau`.
    fn evaluate_at(
        &self,
        theta: &[f64],
        z_noise: &[f64],
        g_theta: &mut [f64],
        g_noise: &mut [f64],
        jacobian: bool,
    ) -> Result<Blocks> {
        let p = self.n_params();
        g_theta.fill(0.0);
        g_noise.fill(0.0);
        let mut blocks = Blocks::default();

        for i in 0..p {
            let (m, s) = (self.prior.mu[i], self.prior.sigma[i]);
            let r = (theta[i] - m) / s;
            blocks.prior += -0.5 * r * r + self.prior_log_norm[i];
            g_theta[i] -= r / s;
        }

        let tau_of = |r: usize| -> f64 {
            match &self.noise {
                Noise::Fixed(t) => t[r],
                Noise::InverseGamma { .. } => z_noise[r].exp(),
            }
        };
        let mut g_tau = vec![0.0; self.n_rows()];

        for (r, row) in self.rows.iter().enumerate() {
            let tau = tau_of(r);
            let mean: f64 = row.cols.iter().map(|&(j, c)| c * theta[j]).sum();
            let resid = row.y - mean;
            let u = resid / tau;
            let mut ll = -0.5 * u * u - tau.ln() - LN_SQRT_2PI;
            let mut d_mean = u / tau;
            let mut d_tau = u * u / tau - 1.0 / tau;
            if row.class == RowClass::Flow {
                let t = truncation_term(mean, tau, 0.0, self.flow_obs_upper);
                ll -= t.log_z;
                d_mean -= t.d_mean;
                d_tau -= t.d_sd;
            }
            *blocks.lik_mut(row.class) += ll;
            for &(j, c) in &row.cols {
                g_theta[j] += d_mean * c;
            }
            g_tau[r] = d_tau;
        }

        let n_lin = self.rows.len();
        for (k, (spec, y)) in self.ratios.iter().enumerate() {
            let r = n_lin + k;
            let tau = tau_of(r);
            let denom: f64 = spec.denominator.iter().map(|&j| theta[j]).sum();
            if denom <= RATIO_EPS {
                return Err(Error::DegenerateRatio(denom));
            }
            let num = theta[spec.numerator];
            let mean = num / denom;
            let u = (y - mean) / tau;
            blocks.ratio_lik += -0.5 * u * u - tau.ln() - LN_SQRT_2PI;
            let d_mean = u / tau;
            // dR/dU_k = -num/denom² for every k in the denominator, plus
            // 1/denom on the numerator itself
            let common = -num / (denom * denom);
            for &j in &spec.denominator {
                g_theta[j] += d_mean * common;
            }
            g_theta[spec.numerator] += d_mean / denom;
            g_tau[r] = u * u / tau - 1.0 / tau;
        }

        if let Noise::InverseGamma { a, b, log_norm } = &self.noise {
            for r in 0..self.n_rows() {
                let zr = z_noise[r];
                let tau = zr.exp();
                blocks.noise_prior += log_norm[r] - (a[r] + 1.0) * zr - b[r] / tau;
                // chain rule through tau = exp(z) for likelihood and prior
                g_noise[r] += g_tau[r] * tau + b[r] / tau - (a[r] + 1.0);
                if jacobian {
                    blocks.jacobian += zr;
                    g_noise[r] += 1.0;
                }
            }
        }
        Ok(blocks)
    }
}

impl LogDensity for Posterior {
    fn dim(&self) -> usize {
        match self.noise {
            Noise::Fixed(_) => self.n_params(),
            Noise::InverseGamma { .. } => self.n_params() + self.n_rows(),
        }
    }

    fn log_density_and_grad(&self, z: &[f64], grad: &mut [f64]) -> Result<f64> {
        let blocks = self.evaluate(z, grad)?;
        let total = blocks.total();
        if !total.is_finite() {
            blocks.check()?;
        }
        Ok(total)
    }

    fn constrain(&self, z: &[f64]) -> Vec<f64> {
        self.to_constrained(z)
    }

    fn param_names(&self) -> Vec<String> {
        self.names.clone()
    }

    fn initial_point(&self) -> Vec<f64> {
        self.mode_point()
    }
}
