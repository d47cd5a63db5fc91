//! Priors on stocks, flows, and noise SDs, plus the elicitation rules used
//! to build them from reported values.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::VariableIndex;
use crate::observations::{CompiledModel, RowClass};
use crate::special::{log_norm_interval, LN_SQRT_2PI};

/// Default prior truncation bound `L` and flow-likelihood bound `L'`.
pub const DEFAULT_UPPER: f64 = 1e4;

/// Normal priors on stocks and normal priors truncated to `[0, upper]` on
/// flows, in variable-index order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    /// The first `n_stocks` entries are stocks; the rest are flows.
    pub n_stocks: usize,
    pub upper: f64,
}

impl PriorSpec {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>, n_stocks: usize, upper: f64) -> Result<Self> {
        if mu.len() != sigma.len() || n_stocks > mu.len() {
            return Err(Error::Dimension(format!(
                "prior has {} means, {} sds, {} stocks",
                mu.len(),
                sigma.len(),
                n_stocks
            )));
        }
        if !(upper > 0.0 && upper.is_finite()) {
            return Err(Error::InvalidPrior(format!("upper bound {upper} must be positive")));
        }
        for (i, (&m, &s)) in mu.iter().zip(&sigma).enumerate() {
            if !m.is_finite() {
                return Err(Error::InvalidPrior(format!("mean of variable {i} is not finite")));
            }
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidPrior(format!("sd of variable {i} is {s}")));
            }
        }
        Ok(Self {
            mu,
            sigma,
            n_stocks,
            upper,
        })
    }

    /// Same prior for every stock and every flow.
    pub fn uniform(index: &VariableIndex, stock: (f64, f64), flow: (f64, f64), upper: f64) -> Result<Self> {
        let q = index.n_stocks();
        let (mu, sigma) = (0..index.len())
            .map(|i| if i < q { stock } else { flow })
            .unzip();
        Self::new(mu, sigma, q, upper)
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn is_flow(&self, i: usize) -> bool {
        i >= self.n_stocks
    }

    pub fn mean_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.mu)
    }

    /// Diagonal prior covariance of the untruncated normals.
    pub fn covariance(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            self.len(),
            self.sigma.iter().map(|s| s * s),
        ))
    }

    /// Mode of each marginal; flow means are clamped into `[0, upper]`.
    pub fn mode(&self) -> Vec<f64> {
        self.mu
            .iter()
            .enumerate()
            .map(|(i, &m)| if self.is_flow(i) { m.clamp(0.0, self.upper) } else { m })
            .collect()
    }

    /// Normalized marginal log density of variable `i` at `x`.
    pub fn log_density(&self, i: usize, x: f64) -> f64 {
        let (m, s) = (self.mu[i], self.sigma[i]);
        let z = (x - m) / s;
        let base = -0.5 * z * z - LN_SQRT_2PI - s.ln();
        if !self.is_flow(i) {
            return base;
        }
        if !(0.0..=self.upper).contains(&x) {
            return f64::NEG_INFINITY;
        }
        base - log_norm_interval(-m / s, (self.upper - m) / s)
    }
}

/// Power of ten closest to `v` in absolute distance; ties go to the lower
/// power.
pub fn nearest_power_of_ten(v: f64) -> Result<f64> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::NonPositive(v));
    }
    let pow = |k: i32| -> f64 { format!("1e{k}").parse().unwrap() };
    let mut k = v.log10().floor() as i32;
    // guard against log10 rounding at exact powers
    if pow(k) > v {
        k -= 1;
    }
    if pow(k + 1) <= v {
        k += 1;
    }
    let (lo, hi) = (pow(k), pow(k + 1));
    Ok(if v - lo <= hi - v { lo } else { hi })
}

fn signed_power(v: f64) -> Result<f64> {
    if v == 0.0 {
        return Ok(0.0);
    }
    Ok(v.signum() * nearest_power_of_ten(v.abs())?)
}

/// Aluminium-case rule for one variable: mode at the nearest power of ten of
/// the reported value, sd `sqrt(40)` times that with a floor of 0.1; an
/// unreported variable gets `(1, 10)`.
pub fn aluminium_prior(reported: Option<f64>) -> Result<(f64, f64)> {
    match reported {
        None => Ok((1.0, 10.0)),
        Some(v) => {
            let mu = signed_power(v)?;
            Ok((mu, (40f64.sqrt() * mu.abs()).max(0.1)))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZincMode {
    Weakly,
    Uninformative,
}

/// Zinc-case rule for one variable. `sign` is only consulted for stocks in
/// uninformative mode when no reported value gives it.
pub fn zinc_prior(
    mode: ZincMode,
    is_stock: bool,
    reported: Option<f64>,
    sign: Option<f64>,
    mean_abs: f64,
) -> Result<(f64, f64)> {
    match mode {
        ZincMode::Weakly => {
            let v = reported
                .ok_or_else(|| Error::InvalidPrior("weakly informative prior needs a reported value".into()))?;
            let mu = signed_power(v)?;
            Ok((mu, (4.0 * mu.abs()).min(4.0).max(0.1)))
        }
        ZincMode::Uninformative => {
            let sd = 40f64.sqrt();
            if !is_stock {
                return Ok((mean_abs, sd));
            }
            let s = sign
                .or(reported.filter(|v| *v != 0.0))
                .ok_or_else(|| Error::InvalidPrior("stock needs a sign in uninformative mode".into()))?;
            Ok((s.signum() * mean_abs, sd))
        }
    }
}

fn check_len(index: &VariableIndex, n: usize) -> Result<()> {
    if n != index.len() {
        return Err(Error::Dimension(format!(
            "{n} reported values for {} variables",
            index.len()
        )));
    }
    Ok(())
}

pub fn elicit_aluminium(index: &VariableIndex, reported: &[Option<f64>], upper: f64) -> Result<PriorSpec> {
    check_len(index, reported.len())?;
    for (i, r) in reported.iter().enumerate() {
        if index.is_flow(i) && matches!(r, Some(v) if *v < 0.0) {
            return Err(Error::InvalidPrior(format!("{} reported negative", index.name(i))));
        }
    }
    let (mu, sigma) = reported
        .iter()
        .map(|r| aluminium_prior(*r))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    PriorSpec::new(mu, sigma, index.n_stocks(), upper)
}

pub fn elicit_zinc(
    index: &VariableIndex,
    mode: ZincMode,
    reported: &[Option<f64>],
    signs: &[Option<f64>],
    mean_abs: f64,
    upper: f64,
) -> Result<PriorSpec> {
    check_len(index, reported.len())?;
    if signs.len() != index.n_stocks() && !signs.is_empty() {
        return Err(Error::Dimension(format!(
            "{} stock signs for {} stocks",
            signs.len(),
            index.n_stocks()
        )));
    }
    let (mu, sigma) = (0..index.len())
        .map(|i| {
            let is_stock = !index.is_flow(i);
            let sign = if is_stock { signs.get(i).copied().flatten() } else { None };
            if !is_stock && matches!(reported[i], Some(v) if v < 0.0) {
                return Err(Error::InvalidPrior(format!("{} reported negative", index.name(i))));
            }
            zinc_prior(mode, is_stock, reported[i], sign, mean_abs).map_err(|e| match e {
                Error::InvalidPrior(m) => Error::InvalidPrior(format!("{}: {m}", index.name(i))),
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    PriorSpec::new(mu, sigma, index.n_stocks(), upper)
}

/// Noise treatment for the observation rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum NoisePriorSpec {
    /// Fixed per-row noise SDs.
    PlugIn { tau: Vec<f64> },
    /// `p(tau) ∝ tau^(-a-1) exp(-b / tau)` per row.
    InverseGamma { a: Vec<f64>, b: Vec<f64> },
}

impl NoisePriorSpec {
    pub fn len(&self) -> usize {
        match self {
            Self::PlugIn { tau } => tau.len(),
            Self::InverseGamma { a, .. } => a.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::PlugIn { tau } => {
                if let Some(t) = tau.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
                    return Err(Error::InvalidPrior(format!("noise sd {t}")));
                }
            }
            Self::InverseGamma { a, b } => {
                if a.len() != b.len() {
                    return Err(Error::Dimension("inverse-gamma a/b lengths differ".into()));
                }
                for (&a, &b) in a.iter().zip(b) {
                    if !(a > 1.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
                        return Err(Error::InvalidPrior(format!(
                            "inverse-gamma needs a > 1 and b > 0, got a={a}, b={b}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Plug-in noise SD for one row: 10% of the magnitude with a floor of 0.1
/// (0.01 for ratios); mass balances get 0.5.
pub fn plug_in_tau(class: RowClass, value: f64) -> f64 {
    match class {
        RowClass::Stock | RowClass::Flow => (0.1 * value.abs()).max(0.1),
        RowClass::Ratio => (0.1 * value).max(0.01),
        RowClass::MassBalance => 0.5,
    }
}

pub fn plug_in_noise(model: &CompiledModel) -> NoisePriorSpec {
    NoisePriorSpec::PlugIn {
        tau: plug_in_values(model),
    }
}

fn plug_in_values(model: &CompiledModel) -> Vec<f64> {
    model
        .classes
        .iter()
        .zip(&model.values)
        .map(|(&class, &v)| plug_in_tau(class, v))
        .collect()
}

/// Inverse-gamma noise prior with `a = 4` and `b = 3 * plug-in`, so each
/// prior mean equals the plug-in value.
pub fn inverse_gamma_noise(model: &CompiledModel) -> NoisePriorSpec {
    let tau = plug_in_values(model);
    NoisePriorSpec::InverseGamma {
        a: vec![4.0; tau.len()],
        b: tau.iter().map(|t| 3.0 * t).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::graph::SystemGraph;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn power_of_ten_examples() {
        assert_eq!(nearest_power_of_ten(35.4).unwrap(), 10.0);
        assert_eq!(nearest_power_of_ten(5.1).unwrap(), 1.0);
        assert_eq!(nearest_power_of_ten(1.0).unwrap(), 1.0);
        assert_eq!(nearest_power_of_ten(55.0).unwrap(), 10.0);
        assert_eq!(nearest_power_of_ten(56.0).unwrap(), 100.0);
        assert_eq!(nearest_power_of_ten(0.04).unwrap(), 0.01);
        assert_eq!(nearest_power_of_ten(0.05).unwrap(), 0.01);
        assert_eq!(nearest_power_of_ten(0.06).unwrap(), 0.1);
        assert!(nearest_power_of_ten(0.0).is_err());
        assert!(nearest_power_of_ten(-3.0).is_err());
    }

    #[test]
    fn aluminium_examples() {
        let (m, s) = aluminium_prior(Some(35.4)).unwrap();
        assert_eq!(m, 10.0);
        assert!(close(s, 63.245_553_203_367_59, 1e-12));
        assert_eq!(aluminium_prior(None).unwrap(), (1.0, 10.0));
        assert_eq!(aluminium_prior(Some(0.04)).unwrap(), (0.01, 0.1));
        let (m, s) = aluminium_prior(Some(-35.4)).unwrap();
        assert_eq!(m, -10.0);
        assert!(close(s, 63.245_553_203_367_59, 1e-12));
    }

    #[test]
    fn zinc_examples() {
        let (m, s) = zinc_prior(ZincMode::Uninformative, false, None, None, 3.6575).unwrap();
        assert_eq!(m, 3.6575);
        assert!(close(s, 40f64.sqrt(), 1e-15));
        assert_eq!(zinc_prior(ZincMode::Weakly, false, Some(8.0), None, 3.6575).unwrap(), (10.0, 4.0));
        let (m, s) = zinc_prior(ZincMode::Weakly, false, Some(0.05), None, 3.6575).unwrap();
        assert_eq!(m, 0.01);
        assert!(close(s, 0.1, 1e-15));
        let (m, s) = zinc_prior(ZincMode::Weakly, false, Some(0.07), None, 3.6575).unwrap();
        assert_eq!(m, 0.1);
        assert!(close(s, 0.4, 1e-15));
        assert_eq!(
            zinc_prior(ZincMode::Uninformative, true, None, Some(-1.0), 3.6575).unwrap().0,
            -3.6575
        );
        assert!(zinc_prior(ZincMode::Uninformative, true, None, None, 3.6575).is_err());
        assert!(zinc_prior(ZincMode::Weakly, false, None, None, 3.6575).is_err());
    }

    #[test]
    fn plug_in_examples() {
        assert!(close(plug_in_tau(RowClass::Flow, 9.3), 0.93, 1e-15));
        assert_eq!(plug_in_tau(RowClass::Flow, 0.04), 0.1);
        assert_eq!(plug_in_tau(RowClass::Ratio, 0.05), 0.01);
        assert_eq!(plug_in_tau(RowClass::MassBalance, 0.0), 0.5);
        assert!(close(plug_in_tau(RowClass::Stock, -13.0), 1.3, 1e-15));
    }

    #[test]
    fn inverse_gamma_mean_matches_plug_in() {
        let g = SystemGraph::build(&fixtures::si_example_system()).unwrap();
        let m = crate::observations::compile(&g, &fixtures::si_example_rows(1.0)).unwrap();
        let NoisePriorSpec::PlugIn { tau } = plug_in_noise(&m) else { unreachable!() };
        let NoisePriorSpec::InverseGamma { a, b } = inverse_gamma_noise(&m) else { unreachable!() };
        for i in 0..tau.len() {
            assert!(close(b[i] / (a[i] - 1.0), tau[i], 1e-15));
        }
        assert!(inverse_gamma_noise(&m).validate().is_ok());
    }

    #[test]
    fn elicit_si_example() {
        let g = SystemGraph::build(&fixtures::si_example_system()).unwrap();
        let idx = g.index();
        let mut reported = vec![None; idx.len()];
        reported[idx.flow("1", "3").unwrap()] = Some(1.7);
        let p = elicit_aluminium(idx, &reported, DEFAULT_UPPER).unwrap();
        assert_eq!(p.mu[idx.flow("1", "3").unwrap()], 1.0);
        assert_eq!(p.mu[0], 1.0);
        assert_eq!(p.sigma[0], 10.0);
        assert!(elicit_aluminium(idx, &reported[..3], DEFAULT_UPPER).is_err());
    }

    // Simpson quadrature of exp(log_density) over the support
    fn integrate(p: &PriorSpec, i: usize) -> f64 {
        let (lo, hi) = if p.is_flow(i) {
            (0.0, p.upper)
        } else {
            (p.mu[i] - 12.0 * p.sigma[i], p.mu[i] + 12.0 * p.sigma[i])
        };
        let n = 200_000;
        let h = (hi - lo) / n as f64;
        let f = |x: f64| p.log_density(i, x).exp();
        let mut s = f(lo) + f(hi);
        for k in 1..n {
            s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(lo + k as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn marginal_densities_normalize() {
        let p = PriorSpec::new(
            vec![-2.0, 3.0, 0.5, 9.0, -1.0],
            vec![1.5, 2.0, 1.0, 3.0, 0.7],
            2,
            10.0,
        )
        .unwrap();
        for i in 0..p.len() {
            let total = integrate(&p, i);
            assert!((total - 1.0).abs() < 1e-6, "variable {i}: {total}");
        }
    }

    #[test]
    fn invalid_priors_rejected() {
        assert!(PriorSpec::new(vec![0.0], vec![0.0], 0, 1.0).is_err());
        assert!(PriorSpec::new(vec![0.0], vec![1.0], 0, -1.0).is_err());
        assert!(PriorSpec::new(vec![0.0, 1.0], vec![1.0], 0, 1.0).is_err());
        let bad = NoisePriorSpec::InverseGamma {
            a: vec![1.0],
            b: vec![1.0],
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn exact_powers_are_fixed_points(k in -12i32..12) {
            let v: f64 = format!("1e{k}").parse().unwrap();
            prop_assert_eq!(nearest_power_of_ten(v).unwrap(), v);
        }

        #[test]
        fn aluminium_sd_floor(v in -1e6f64..1e6) {
            let (_, s) = aluminium_prior(Some(v)).unwrap();
            prop_assert!(s >= 0.1);
        }

        #[test]
        fn nearest_power_is_nearest(v in 1e-6f64..1e6) {
            let p = nearest_power_of_ten(v).unwrap();
            for k in -8..8 {
                let q: f64 = format!("1e{k}").parse().unwrap();
                prop_assert!((v - p).abs() <= (v - q).abs());
            }
        }
    }
}
