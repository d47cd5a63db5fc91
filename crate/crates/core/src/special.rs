//! Standard-normal helpers and the truncated-normal pieces the model needs.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use statrs::function::erf::erfc;

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard-normal log density.
pub fn log_phi(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

pub fn phi(x: f64) -> f64 {
    log_phi(x).exp()
}

/// Standard-normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `ln Φ(x)`, accurate deep into the lower tail.
pub fn log_ndtr(x: f64) -> f64 {
    if x > 6.0 {
        // Φ(x) = 1 - Φ(-x), and Φ(-x) is tiny
        return (-norm_cdf(-x)).ln_1p();
    }
    if x > -20.0 {
        return norm_cdf(x).ln();
    }
    // asymptotic series for the Mills ratio
    let z2 = 1.0 / (x * x);
    let series = 1.0 - z2 * (1.0 - 3.0 * z2 * (1.0 - 5.0 * z2 * (1.0 - 7.0 * z2)));
    log_phi(x) - (-x).ln() + series.ln()
}

/// `ln(Φ(b) - Φ(a))` for `a < b`, without cancellation in either tail.
pub fn log_norm_interval(a: f64, b: f64) -> f64 {
    debug_assert!(a <= b);
    if a >= 0.0 {
        // both in the upper tail: Φ(-a) - Φ(-b)
        let la = log_ndtr(-a);
        let lb = log_ndtr(-b);
        la + log1m_exp(lb - la)
    } else if b <= 0.0 {
        let la = log_ndtr(a);
        let lb = log_ndtr(b);
        lb + log1m_exp(la - lb)
    } else {
        (-norm_cdf(a) - norm_cdf(-b)).ln_1p()
    }
}

/// `ln(1 - e^x)` for `x <= 0`.
pub fn log1m_exp(x: f64) -> f64 {
    if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

pub fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Log normalizer of a normal with mean `mean`, sd `sd`, truncated to
/// `[lower, upper]`, together with its partial derivatives with respect to
/// `mean` and `sd`.
#[derive(Clone, Copy, Debug)]
pub struct TruncationTerm {
    pub log_z: f64,
    pub d_mean: f64,
    pub d_sd: f64,
}

pub fn truncation_term(mean: f64, sd: f64, lower: f64, upper: f64) -> TruncationTerm {
    let a = (lower - mean) / sd;
    let b = (upper - mean) / sd;
    let log_z = log_norm_interval(a, b);
    // φ(x)/Z computed in log space; φ(±∞) = 0
    let ratio = |x: f64| {
        if x.is_infinite() {
            0.0
        } else {
            (log_phi(x) - log_z).exp()
        }
    };
    let ra = ratio(a);
    let rb = ratio(b);
    let xa = if a.is_infinite() { 0.0 } else { a * ra };
    let xb = if b.is_infinite() { 0.0 } else { b * rb };
    TruncationTerm {
        log_z,
        d_mean: (ra - rb) / sd,
        d_sd: -(xb - xa) / sd,
    }
}

/// Draw from N(mean, sd²) truncated to `[lower, upper]`.
pub fn sample_truncated_normal<R: Rng + ?Sized>(
    rng: &mut R,
    mean: f64,
    sd: f64,
    lower: f64,
    upper: f64,
) -> f64 {
    let a = (lower - mean) / sd;
    let b = (upper - mean) / sd;
    let z = if a >= 0.0 {
        sample_std_tail(rng, a, b)
    } else if b <= 0.0 {
        -sample_std_tail(rng, -b, -a)
    } else {
        sample_std_straddle(rng, a, b)
    };
    (mean + sd * z).clamp(lower, upper)
}

// Standard normal restricted to [a, b] with 0 <= a < b.
fn sample_std_tail<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    let width = b - a;
    // uniform proposal is efficient when the window is narrow relative to the
    // local decay rate of the density
    if width * a.max(1.0) < 1.0 {
        loop {
            let x = a + width * rng.random::<f64>();
            if rng.random::<f64>().ln() <= 0.5 * (a * a - x * x) {
                return x;
            }
        }
    }
    if a < 0.5 {
        loop {
            let x: f64 = StandardNormal.sample(rng);
            let x = x.abs();
            if x >= a && x <= b {
                return x;
            }
        }
    }
    // exponential proposal for the far tail
    let rate = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let e: f64 = Exp1.sample(rng);
        let x = a + e / rate;
        if x > b {
            continue;
        }
        let log_accept = -0.5 * (x - rate) * (x - rate);
        if rng.random::<f64>().ln() <= log_accept {
            return x;
        }
    }
}

// Standard normal restricted to [a, b] with a < 0 < b.
fn sample_std_straddle<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    if b - a < 1.0 {
        loop {
            let x = a + (b - a) * rng.random::<f64>();
            if rng.random::<f64>().ln() <= -0.5 * x * x {
                return x;
            }
        }
    }
    loop {
        let x: f64 = StandardNormal.sample(rng);
        if x >= a && x <= b {
            return x;
        }
    }
}
