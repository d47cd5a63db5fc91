//! Conjugate Gaussian model: closed-form posterior, ridge baseline, and the
//! MSE bound for the posterior mean.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::VariableIndex;
use crate::observations::CompiledModel;
use crate::priors::PriorSpec;
use crate::special::norm_cdf;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

fn check_dims(mu: &DVector<f64>, sigma: &DMatrix<f64>, x: &DMatrix<f64>, n: usize) -> Result<()> {
    let p = mu.len();
    if sigma.shape() != (p, p) {
        return Err(Error::Dimension(format!(
            "prior covariance is {:?}, expected ({p}, {p})",
            sigma.shape()
        )));
    }
    if x.ncols() != p || x.nrows() != n {
        return Err(Error::Dimension(format!(
            "design matrix is {:?}, expected ({n}, {p})",
            x.shape()
        )));
    }
    Ok(())
}

/// Posterior of `theta ~ N(mu, sigma)` given `y = X theta + eps`,
/// `eps ~ N(0, diag(t))`. `t` holds noise variances.
pub fn gaussian_posterior(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    t: &DVector<f64>,
) -> Result<GaussianPosterior> {
    let n = y.len();
    check_dims(mu, sigma, x, n)?;
    if t.len() != n {
        return Err(Error::Dimension(format!("{} noise variances for {n} rows", t.len())));
    }
    if let Some(v) = t.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::NonPositive(*v));
    }
    if n == 0 {
        return Ok(GaussianPosterior {
            mean: mu.clone(),
            cov: sigma.clone(),
        });
    }
    // x_sigma = X Σ (n × p); s = X Σ Xᵀ + T
    let x_sigma = x * sigma;
    let mut s = &x_sigma * x.transpose();
    for i in 0..n {
        s[(i, i)] += t[i];
    }
    let chol = Cholesky::new(s).ok_or_else(|| Error::NotPositiveDefinite("X Σ Xᵀ + T".into()))?;
    let resid = y - x * mu;
    let mean = mu + x_sigma.transpose() * chol.solve(&resid);
    let mut cov = sigma - x_sigma.transpose() * chol.solve(&x_sigma);
    symmetrize(&mut cov);
    Ok(GaussianPosterior { mean, cov })
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

impl GaussianPosterior {
    /// Posterior under the untruncated version of `prior` and the linear
    /// rows of `model`.
    pub fn from_model(prior: &PriorSpec, model: &CompiledModel) -> Result<Self> {
        if !model.is_linear() {
            return Err(Error::NonlinearRows);
        }
        let t = model.tau.map(|v| v * v);
        gaussian_posterior(&prior.mean_vector(), &prior.covariance(), &model.x, &model.y, &t)
    }

    pub fn sd(&self) -> DVector<f64> {
        self.cov.diagonal().map(|v| v.max(0.0).sqrt())
    }

    /// Posterior probability of a negative value, for every flow variable.
    pub fn negative_mass(&self, index: &VariableIndex) -> Vec<(String, f64)> {
        let sd = self.sd();
        (index.n_stocks()..index.len())
            .map(|i| {
                let p = if sd[i] > 0.0 {
                    norm_cdf(-self.mean[i] / sd[i])
                } else if self.mean[i] < 0.0 {
                    1.0
                } else {
                    0.0
                };
                (index.name(i), p)
            })
            .collect()
    }
}

/// Ridge estimate `argmin ||y - X theta||² + (tau² / lambda) ||theta||²`,
/// solved through the p × p normal equations.
pub fn ridge_estimate(x: &DMatrix<f64>, y: &DVector<f64>, tau: f64, lambda: f64) -> Result<DVector<f64>> {
    if !(lambda > 0.0) {
        return Err(Error::NonPositive(lambda));
    }
    if !(tau > 0.0) {
        return Err(Error::NonPositive(tau));
    }
    if x.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "design matrix has {} rows, y has {}",
            x.nrows(),
            y.len()
        )));
    }
    let penalty = tau * tau / lambda;
    let mut a = x.transpose() * x;
    for i in 0..a.nrows() {
        a[(i, i)] += penalty;
    }
    let chol = Cholesky::new(a).ok_or_else(|| Error::NotPositiveDefinite("XᵀX + cI".into()))?;
    Ok(chol.solve(&(x.transpose() * y)))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MseBoundReport {
    pub bound_value: f64,
    pub bias_term: f64,
    pub variance_term: f64,
    /// Eigenvalues of the prior covariance, descending.
    pub eigenvalues: Vec<f64>,
    /// Singular values of `X Σ^{1/2}`, ascending.
    pub singular_values: Vec<f64>,
    pub empirical_mse: Option<f64>,
}

/// Upper bound on `E ||theta* - mu_n||²` for homoscedastic noise `tau`.
pub fn mse_bound(
    theta_star: &DVector<f64>,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    x: &DMatrix<f64>,
    tau: f64,
) -> Result<MseBoundReport> {
    let p = mu.len();
    let n = x.nrows();
    check_dims(mu, sigma, x, n)?;
    if theta_star.len() != p {
        return Err(Error::Dimension("theta* length".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::NonPositive(tau));
    }
    let chol = Cholesky::new(sigma.clone())
        .ok_or_else(|| Error::NotPositiveDefinite("prior covariance".into()))?;
    let beta = theta_star - mu;
    // Tr(Σ^{-1/2} β βᵀ Σ^{-1/2}) = βᵀ Σ⁻¹ β
    let trace = if beta.iter().all(|b| *b == 0.0) {
        0.0
    } else {
        beta.dot(&chol.solve(&beta))
    };

    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(sigma.clone()).eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(|a, b| b.total_cmp(a));
    let lambda1 = eigenvalues[0];

    let mut singular_values: Vec<f64> = if n == 0 {
        Vec::new()
    } else {
        let g = x * sigma * x.transpose();
        SymmetricEigen::new(g)
            .eigenvalues
            .iter()
            .map(|v| v.max(0.0).sqrt())
            .collect()
    };
    singular_values.sort_by(|a, b| a.total_cmp(b));

    let t2 = tau * tau;
    let t4 = t2 * t2;
    let shrink: f64 = singular_values
        .iter()
        .map(|d| t4 / (d * d + t2).powi(2))
        .sum();
    let bias_term = trace * lambda1 * (p as f64 - n as f64 + shrink);
    let variance_term = t2
        * singular_values
            .iter()
            .map(|d| lambda1 * d * d / (d * d + t2).powi(2))
            .sum::<f64>();
    Ok(MseBoundReport {
        bound_value: bias_term + variance_term,
        bias_term,
        variance_term,
        eigenvalues,
        singular_values,
        empirical_mse: None,
    })
}

/// Bound for a compiled model; every row must share one noise SD.
pub fn mse_bound_for_model(
    theta_star: &DVector<f64>,
    prior: &PriorSpec,
    model: &CompiledModel,
) -> Result<MseBoundReport> {
    if !model.is_linear() {
        return Err(Error::NonlinearRows);
    }
    let tau = match model.tau.iter().next() {
        Some(&t) => t,
        None => 1.0,
    };
    if model.tau.iter().any(|&t| t != tau) {
        return Err(Error::Heteroscedastic);
    }
    mse_bound(theta_star, &prior.mean_vector(), &prior.covariance(), &model.x, tau)
}

/// Monte Carlo estimate of `E ||theta* - mu_n||²` over `draws` noise
/// realizations with `y = X theta* + eps`.
pub fn empirical_mse<R: Rng + ?Sized>(
    theta_star: &DVector<f64>,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    x: &DMatrix<f64>,
    tau: f64,
    draws: usize,
    rng: &mut R,
) -> Result<f64> {
    let n = x.nrows();
    check_dims(mu, sigma, x, n)?;
    if n == 0 {
        return Ok((theta_star - mu).norm_squared());
    }
    let x_sigma = x * sigma;
    let mut s = &x_sigma * x.transpose();
    for i in 0..n {
        s[(i, i)] += tau * tau;
    }
    let chol = Cholesky::new(s).ok_or_else(|| Error::NotPositiveDefinite("X Σ Xᵀ + T".into()))?;
    // gain K = Σ Xᵀ S⁻¹, stored as p × n
    let gain = chol.solve(&x_sigma).transpose();
    let base = mu + &gain * (x * (theta_star - mu)) - theta_star;
    let mut total = 0.0;
    let mut eps = DVector::zeros(n);
    for _ in 0..draws {
        for e in eps.iter_mut() {
            *e = tau * rng.sample::<f64, _>(StandardNormal);
        }
        total += (&base + &gain * &eps).norm_squared();
    }
    Ok(total / draws as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::graph::SystemGraph;
    use crate::observations::{balance_rows, compile};
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_instance(rng: &mut ChaCha8Rng, p: usize, n: usize) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
        let mu = DVector::from_fn(p, |_, _| rng.random_range(-3.0..3.0));
        let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
        let sigma = &a * a.transpose() + DMatrix::identity(p, p) * 0.5;
        let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1i32..=1) as f64);
        (mu, sigma, x)
    }

    // precision-form posterior: (Σ⁻¹ + Xᵀ T⁻¹ X)⁻¹
    fn precision_oracle(
        mu: &DVector<f64>,
        sigma: &DMatrix<f64>,
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        t: &DVector<f64>,
    ) -> (DVector<f64>, DMatrix<f64>) {
        let sinv = sigma.clone().try_inverse().unwrap();
        let tinv = DMatrix::from_diagonal(&t.map(|v| 1.0 / v));
        let prec = &sinv + x.transpose() * &tinv * x;
        let cov = prec.try_inverse().unwrap();
        let mean = &cov * (&sinv * mu + x.transpose() * &tinv * y);
        (mean, cov)
    }

    #[test]
    fn scalar_update() {
        let post = gaussian_posterior(
            &DVector::from_element(1, 0.0),
            &DMatrix::from_element(1, 1, 1.0),
            &DMatrix::from_element(1, 1, 1.0),
            &DVector::from_element(1, 4.0),
            &DVector::from_element(1, 1.0),
        )
        .unwrap();
        assert!((post.mean[0] - 2.0).abs() < 1e-14);
        assert!((post.cov[(0, 0)] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn no_data_returns_prior_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (mu, sigma, _) = random_instance(&mut rng, 5, 0);
        let post = gaussian_posterior(
            &mu,
            &sigma,
            &DMatrix::zeros(0, 5),
            &DVector::zeros(0),
            &DVector::zeros(0),
        )
        .unwrap();
        assert_eq!(post.mean, mu);
        assert_eq!(post.cov, sigma);
    }

    #[test]
    fn matches_precision_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let (mu, sigma, x) = random_instance(&mut rng, 12, 6);
            let y = DVector::from_fn(6, |_, _| rng.random_range(-5.0..5.0));
            let t = DVector::from_fn(6, |_, _| rng.random_range(0.2..2.0));
            let post = gaussian_posterior(&mu, &sigma, &x, &y, &t).unwrap();
            let (m, c) = precision_oracle(&mu, &sigma, &x, &y, &t);
            assert!((&post.mean - m).amax() < 1e-8);
            assert!((&post.cov - c).amax() < 1e-8);
            assert_eq!(post.cov, post.cov.transpose());
        }
    }

    #[test]
    fn ridge_limits() {
        let x = DMatrix::identity(4, 4);
        let y = DVector::from_vec(vec![1.0, -2.0, 3.0, 0.5]);
        let est = ridge_estimate(&x, &y, 1e-6, 1.0).unwrap();
        assert!((est - &y).amax() < 1e-10);
        let zero = ridge_estimate(&x, &DVector::zeros(4), 1.0, 1.0).unwrap();
        assert_eq!(zero, DVector::zeros(4));
        assert!(ridge_estimate(&x, &y, 1.0, 0.0).is_err());
    }

    #[test]
    fn bound_special_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mu, sigma, x) = random_instance(&mut rng, 6, 3);
        let r = mse_bound(&mu, &mu, &sigma, &x, 1e-3).unwrap();
        assert_eq!(r.bias_term, 0.0);
        assert_eq!(r.bound_value, r.variance_term);
        assert!(r.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        assert!(r.singular_values.windows(2).all(|w| w[0] <= w[1]));

        let star = &mu + DVector::from_element(6, 1.0);
        let r = mse_bound(&star, &mu, &sigma, &DMatrix::zeros(0, 6), 1.0).unwrap();
        let trace = (&star - &mu).dot(&(sigma.clone().try_inverse().unwrap() * (&star - &mu)));
        assert!((r.bound_value - trace * r.eigenvalues[0] * 6.0).abs() < 1e-9 * r.bound_value);
    }

    #[test]
    fn heteroscedastic_rejected() {
        let g = SystemGraph::build(&fixtures::si_example_system()).unwrap();
        let mut rows = fixtures::si_example_rows(1.0);
        rows.extend(balance_rows(&g, &Default::default(), 0.5).unwrap());
        let m = compile(&g, &rows).unwrap();
        let prior = PriorSpec::uniform(g.index(), (0.0, 3.0), (1.0, 3.0), 1e4).unwrap();
        let star = DVector::zeros(12);
        assert!(matches!(
            mse_bound_for_model(&star, &prior, &m),
            Err(Error::Heteroscedastic)
        ));
    }

    #[test]
    fn negative_mass_on_flows() {
        let g = SystemGraph::build(&fixtures::si_example_system()).unwrap();
        let prior = PriorSpec::uniform(g.index(), (0.0, 1.0), (0.0, 1.0), 1e4).unwrap();
        let m = compile(&g, &[]).unwrap();
        let post = GaussianPosterior::from_model(&prior, &m).unwrap();
        let neg = post.negative_mass(g.index());
        assert_eq!(neg.len(), 10);
        assert!(neg.iter().all(|(_, p)| (*p - 0.5).abs() < 1e-15));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn extra_row_never_widens(seed in 0u64..10_000, n in 0usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (mu, sigma, x) = random_instance(&mut rng, 8, n + 1);
            let y = DVector::from_fn(n + 1, |_, _| rng.random_range(-5.0..5.0));
            let t = DVector::from_fn(n + 1, |_, _| rng.random_range(0.1..2.0));
            let fewer = gaussian_posterior(
                &mu, &sigma, &x.rows(0, n).into_owned(), &y.rows(0, n).into_owned(), &t.rows(0, n).into_owned()
            ).unwrap();
            let more = gaussian_posterior(&mu, &sigma, &x, &y, &t).unwrap();
            for i in 0..8 {
                prop_assert!(more.cov[(i, i)] <= fewer.cov[(i, i)] + 1e-10);
            }
        }

        #[test]
        fn ridge_equals_zero_mean_posterior(seed in 0u64..10_000, n in 1usize..10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = 12;
            let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-2.0..2.0));
            let y = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
            let tau: f64 = rng.random_range(0.3..2.0);
            let lambda: f64 = rng.random_range(0.5..50.0);
            let ridge = ridge_estimate(&x, &y, tau, lambda).unwrap();
            let post = gaussian_posterior(
                &DVector::zeros(p),
                &(DMatrix::identity(p, p) * lambda),
                &x,
                &y,
                &DVector::from_element(n, tau * tau),
            ).unwrap();
            let rel = (&ridge - &post.mean).norm() / post.mean.norm().max(1e-300);
            prop_assert!(rel < 1e-8, "relative error {rel}");
        }

        #[test]
        fn interpolates_as_noise_vanishes(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (mu, sigma, _) = random_instance(&mut rng, 6, 0);
            let x = DMatrix::from_fn(4, 6, |_, _| rng.random_range(-2.0..2.0));
            let y = DVector::from_fn(4, |_, _| rng.random_range(-5.0..5.0));
            let post = gaussian_posterior(&mu, &sigma, &x, &y, &DVector::from_element(4, 1e-12)).unwrap();
            prop_assert!((&x * &post.mean - &y).amax() < 1e-4);
        }
    }
}
