//! Convergence diagnostics: split R-hat, effective sample size, MCSE.

use crate::error::{Error, Result};

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Split-chain potential scale reduction for one variable.
///
/// Each chain is cut into two halves (the middle draw is dropped for odd
/// lengths). Identical constant chains give exactly 1.
pub fn split_rhat(chains: &[&[f64]]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::SingleChain);
    }
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if n < 4 {
        return Err(Error::TooFewSamples { needed: 4, got: n });
    }
    let half = n / 2;
    let mut splits: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let c = &c[..n];
        splits.push(&c[..half]);
        splits.push(&c[n - half..]);
    }
    Ok(rhat_of(&splits))
}

fn rhat_of(chains: &[&[f64]]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let b = n * variance(&means);
    let w = mean(&chains.iter().map(|c| variance(c)).collect::<Vec<_>>());
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// R-hat for every variable; `draws[c][d][v]` is chain `c`, draw `d`.
pub fn rhat_all(draws: &[Vec<Vec<f64>>]) -> Result<Vec<f64>> {
    let dim = draws.first().and_then(|c| c.first()).map_or(0, |d| d.len());
    (0..dim)
        .map(|v| {
            let cols: Vec<Vec<f64>> = draws
                .iter()
                .map(|c| c.iter().map(|d| d[v]).collect())
                .collect();
            let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
            split_rhat(&refs)
        })
        .collect()
}

fn autocov(x: &[f64], mean: f64, lag: usize) -> f64 {
    let n = x.len();
    let mut s = 0.0;
    for i in 0..n - lag {
        s += (x[i] - mean) * (x[i + lag] - mean);
    }
    s / n as f64
}

/// Multi-chain effective sample size with Geyer's initial monotone
/// sequence estimator.
///
/// A variable with zero variance across all draws gets the full draw count.
pub fn ess(chains: &[&[f64]]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if m == 0 || n < 4 {
        return f64::NAN;
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let acov = |lag: usize| -> f64 {
        chains
            .iter()
            .zip(&means)
            .map(|(c, &mu)| autocov(c, mu, lag))
            .sum::<f64>()
            / m as f64
    };
    let mean_var = acov(0) * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += variance(&means);
    }
    if !(var_plus > 0.0) {
        return (m * n) as f64;
    }

    let mut rho = vec![0.0; n];
    rho[0] = 1.0;
    let mut rho_even = 1.0;
    let mut rho_odd = 1.0 - (mean_var - acov(1)) / var_plus;
    rho[1] = rho_odd;
    let mut t = 1;
    while t < n - 4 && rho_even + rho_odd > 0.0 {
        rho_even = 1.0 - (mean_var - acov(t + 1)) / var_plus;
        rho_odd = 1.0 - (mean_var - acov(t + 2)) / var_plus;
        if rho_even + rho_odd >= 0.0 {
            rho[t + 1] = rho_even;
            rho[t + 2] = rho_odd;
        }
        t += 2;
    }
    let max_t = t;
    if rho_even > 0.0 {
        rho[max_t + 1] = rho_even;
    }
    // enforce a monotone sequence of pair sums
    let mut t = 1;
    while t + 3 <= max_t {
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t] {
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0;
            rho[t + 2] = rho[t + 1];
        }
        t += 2;
    }
    let total = (m * n) as f64;
    let mut tau = -1.0 + 2.0 * rho[..=max_t].iter().sum::<f64>() + rho[max_t + 1];
    tau = tau.max(1.0 / total.log10());
    total / tau
}

/// Monte Carlo standard error of the mean: `sd / sqrt(ess)`.
pub fn mcse(chains: &[&[f64]]) -> f64 {
    let all: Vec<f64> = chains.iter().flat_map(|c| c.iter().copied()).collect();
    let sd = variance(&all).sqrt();
    if sd == 0.0 {
        return 0.0;
    }
    sd / ess(chains).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn identical_chains_give_one() {
        let k = vec![2.5; 10];
        assert_eq!(split_rhat(&[&k, &k]).unwrap(), 1.0);
    }

    #[test]
    fn offset_chains_match_hand_formula() {
        let a = normals(1, 400);
        let b: Vec<f64> = normals(2, 400).iter().map(|v| v + 10.0).collect();
        let r = split_rhat(&[&a, &b]).unwrap();
        // hand computation on the four half-chains
        let halves = [&a[..200], &a[200..], &b[..200], &b[200..]];
        let n = 200.0;
        let ms: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / n).collect();
        let grand = ms.iter().sum::<f64>() / 4.0;
        let bb = n / 3.0 * ms.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
        let ww = halves
            .iter()
            .zip(&ms)
            .map(|(h, m)| h.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
            .sum::<f64>()
            / 4.0;
        let expected = (((n - 1.0) / n * ww + bb / n) / ww).sqrt();
        assert!((r - expected).abs() < 1e-12);
        assert!(r > 1.1);
    }

    #[test]
    fn iid_draws_near_one() {
        let mut ok = 0;
        for s in 0..20 {
            let x = normals(100 + s, 2000);
            let r = split_rhat(&[&x[..1000], &x[1000..]]).unwrap();
            if (1.0..=1.05).contains(&r) || (r < 1.0 && r > 0.99) {
                ok += 1;
            }
        }
        assert!(ok >= 19);
    }

    #[test]
    fn errors() {
        let x = vec![1.0; 10];
        assert!(matches!(split_rhat(&[&x]), Err(Error::SingleChain)));
        assert!(split_rhat(&[&x[..3], &x[..3]]).is_err());
    }

    #[test]
    fn ess_of_iid_and_ar1() {
        let x = normals(5, 4000);
        let e = ess(&[&x[..2000], &x[2000..]]);
        assert!(e > 3000.0 && e < 5000.0, "{e}");
        // AR(1) with phi = 0.9 has ess ratio (1 - phi) / (1 + phi)
        let w = normals(6, 20000);
        let mut y = vec![0.0; 20000];
        for i in 1..y.len() {
            y[i] = 0.9 * y[i - 1] + w[i] * (1.0 - 0.81f64).sqrt();
        }
        let e = ess(&[&y[..10000], &y[10000..]]);
        let expected = 20000.0 * 0.1 / 1.9;
        assert!(e > 0.5 * expected && e < 2.0 * expected, "{e} vs {expected}");
    }
}
