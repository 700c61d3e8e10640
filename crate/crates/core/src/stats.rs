//! Exact statistical kernels: binary entropy, Poisson photon statistics and
//! one-sided exact binomial confidence bounds.
//!
//! The binomial CDF is evaluated through the regularized incomplete beta
//! function with a Lentz continued fraction whose prefactor is a
//! saddle-point binomial density (Loader's `stirlerr`/`bd0` decomposition).
//! That keeps the evaluation accurate at 10^9-scale trial counts, where both
//! term summation and naive `lgamma` differences break down.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("probability {0} outside [0, 1]")]
    ProbabilityDomain(f64),
    #[error("mean photon number {0} must be finite and non-negative")]
    NegativeMean(f64),
    #[error("epsilon {0} must lie in (0, 0.5)")]
    Epsilon(f64),
    #[error("invalid binomial sample: {successes} successes in {trials} trials")]
    Sample { successes: u64, trials: u64 },
}

/// A pair of one-sided bounds, each failing with probability at most
/// `epsilon_per_side`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    pub epsilon_per_side: f64,
}

impl ConfidenceInterval {
    pub fn new(lower: f64, upper: f64, epsilon_per_side: f64) -> Result<Self, StatsError> {
        for p in [lower, upper] {
            if !(0.0..=1.0).contains(&p) {
                return Err(StatsError::ProbabilityDomain(p));
            }
        }
        if lower > upper {
            return Err(StatsError::ProbabilityDomain(lower));
        }
        check_epsilon(epsilon_per_side)?;
        Ok(Self {
            lower,
            upper,
            epsilon_per_side,
        })
    }

    /// The vacuous interval `[0, 1]`.
    pub fn full(epsilon_per_side: f64) -> Self {
        Self {
            lower: 0.0,
            upper: 1.0,
            epsilon_per_side,
        }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, p: f64) -> bool {
        self.lower <= p && p <= self.upper
    }
}

fn check_epsilon(eps: f64) -> Result<(), StatsError> {
    if eps > 0.0 && eps < 0.5 {
        Ok(())
    } else {
        Err(StatsError::Epsilon(eps))
    }
}

/// Shannon entropy of a Bernoulli(p) variable, in bits.
pub fn binary_entropy(p: f64) -> Result<f64, StatsError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(StatsError::ProbabilityDomain(p));
    }
    if p == 0.0 || p == 1.0 {
        return Ok(0.0);
    }
    Ok(-p * p.log2() - (1.0 - p) * (1.0 - p).log2())
}

/// `H2(p)` for arguments already known to be probabilities.
pub(crate) fn h2(p: f64) -> f64 {
    binary_entropy(p.clamp(0.0, 1.0)).unwrap_or(0.0)
}

fn check_mean(mu: f64) -> Result<(), StatsError> {
    if mu.is_finite() && mu >= 0.0 {
        Ok(())
    } else {
        Err(StatsError::NegativeMean(mu))
    }
}

/// `e^{-mu} mu^n / n!`, evaluated in log space.
pub fn poisson_pmf(n: u64, mu: f64) -> Result<f64, StatsError> {
    check_mean(mu)?;
    Ok(poisson_pmf_unchecked(n, mu))
}

pub(crate) fn poisson_pmf_unchecked(n: u64, mu: f64) -> f64 {
    if mu == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    if n == 0 {
        return (-mu).exp();
    }
    let nf = n as f64;
    (nf * mu.ln() - mu - ln_gamma(nf + 1.0)).exp()
}

/// Poisson mass above `n_max`: `1 - sum_{n <= n_max} pmf(n)`, clamped to `[0, 1]`.
///
/// Summed directly from `n_max + 1` upward when that tail is the small side,
/// so the result keeps relative precision far below machine epsilon.
pub fn poisson_tail_mass(n_max: u64, mu: f64) -> Result<f64, StatsError> {
    check_mean(mu)?;
    if mu == 0.0 {
        return Ok(0.0);
    }
    if (n_max as f64) < mu {
        let head: f64 = (0..=n_max).map(|n| poisson_pmf_unchecked(n, mu)).sum();
        return Ok((1.0 - head).clamp(0.0, 1.0));
    }
    let mut term = poisson_pmf_unchecked(n_max + 1, mu);
    let mut sum = 0.0;
    let mut n = n_max + 1;
    while term > 0.0 {
        sum += term;
        if term < sum * 1e-18 {
            break;
        }
        n += 1;
        term *= mu / n as f64;
    }
    Ok(sum.clamp(0.0, 1.0))
}

// ---------------------------------------------------------------------------
// Binomial density with Loader's saddle-point decomposition.

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `ln(n!) - [(n + 1/2) ln n - n + ln sqrt(2 pi)]`.
fn stirlerr(n: f64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n <= 15.0 {
        return ln_gamma(n + 1.0) - (n + 0.5) * n.ln() + n - LN_SQRT_2PI;
    }
    let nn = n * n;
    if n > 500.0 {
        (S0 - S1 / nn) / n
    } else if n > 80.0 {
        (S0 - (S1 - S2 / nn) / nn) / n
    } else if n > 35.0 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / n
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
    }
}

/// Deviance term `x ln(x / np) + np - x`, with `d = x - np` supplied so the
/// caller can avoid cancellation when `np` comes from a rounded probability.
fn bd0(x: f64, np: f64, d: f64) -> f64 {
    if x == 0.0 {
        return np;
    }
    if d.abs() < 0.1 * (x + np) {
        let v = d / (x + np);
        let mut s = d * v;
        let mut ej = 2.0 * x * v;
        let v2 = v * v;
        for j in 1..1000 {
            ej *= v2;
            let s1 = s + ej / f64::from(2 * j + 1);
            if s1 == s {
                return s1;
            }
            s = s1;
        }
        s
    } else {
        x * (d / np).ln_1p() - d
    }
}

/// `ln P[Bin(n, p) = k]` with `q = 1 - p` passed separately; whichever of the
/// two is smaller is trusted to full relative precision.
fn ln_binom_pmf(k: f64, n: f64, p: f64, q: f64) -> f64 {
    if p == 0.0 {
        return if k == 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if q == 0.0 {
        return if k == n { 0.0 } else { f64::NEG_INFINITY };
    }
    let small_p = p <= q;
    if k == 0.0 {
        return if small_p {
            n * (-p).ln_1p()
        } else {
            n * q.ln()
        };
    }
    if k == n {
        return if small_p {
            n * p.ln()
        } else {
            n * (-q).ln_1p()
        };
    }
    let (np, nq) = (n * p, n * q);
    // k - np == nq - (n - k) in exact arithmetic
    let d = if small_p { k - np } else { nq - (n - k) };
    let lc = stirlerr(n) - stirlerr(k) - stirlerr(n - k) - bd0(k, np, d) - bd0(n - k, nq, -d);
    let lf = std::f64::consts::TAU.ln() + k.ln() + (-k / n).ln_1p();
    lc - 0.5 * lf
}

/// Sum of `P[X = i]` for `i` from `k` moving away from the mean (`up` selects
/// the direction). Only used on the side of `k` away from the mean, where
/// terms shrink monotonically from the first one.
fn tail_sum(k: u64, n: u64, p: f64, q: f64, up: bool) -> f64 {
    let mut term = ln_binom_pmf(k as f64, n as f64, p, q).exp();
    let mut sum = 0.0;
    let mut i = k;
    let (ratio_up, ratio_down) = (p / q, q / p);
    while term > 0.0 {
        sum += term;
        if term <= sum * 1e-18 {
            break;
        }
        if up {
            if i == n {
                break;
            }
            term *= (n - i) as f64 / (i + 1) as f64 * ratio_up;
            i += 1;
        } else {
            if i == 0 {
                break;
            }
            term *= i as f64 / (n - i + 1) as f64 * ratio_down;
            i -= 1;
        }
    }
    sum.min(1.0)
}

/// `P[Bin(trials, p) <= successes]`.
pub fn binomial_cdf(successes: u64, trials: u64, p: f64) -> f64 {
    if successes >= trials || p <= 0.0 {
        return 1.0;
    }
    if p >= 1.0 {
        return 0.0;
    }
    let q = 1.0 - p;
    if (successes as f64) < trials as f64 * p {
        tail_sum(successes, trials, p, q, false)
    } else {
        1.0 - tail_sum(successes + 1, trials, p, q, true)
    }
}

/// `P[Bin(trials, p) >= successes]`.
pub fn binomial_sf(successes: u64, trials: u64, p: f64) -> f64 {
    if successes == 0 || p >= 1.0 {
        return 1.0;
    }
    if successes > trials || p <= 0.0 {
        return 0.0;
    }
    let q = 1.0 - p;
    if (successes as f64) > trials as f64 * p {
        tail_sum(successes, trials, p, q, true)
    } else {
        1.0 - tail_sum(successes - 1, trials, p, q, false)
    }
}

const BISECTION_REL_TOL: f64 = 1e-12;
const BISECTION_ABS_FLOOR: f64 = 1e-300;

/// Exact one-sided (Clopper-Pearson) bounds on a binomial proportion.
///
/// `upper` is the smallest `p` with `P[Bin(n, p) <= k] <= eps`; `lower` is the
/// largest `p` with `P[Bin(n, p) >= k] <= eps`. Bisection stops when the
/// bracket is narrower than `1e-12` relative to the bound, and the returned
/// endpoint is always the conservative side of the bracket.
pub fn binomial_bounds(
    successes: u64,
    trials: u64,
    epsilon: f64,
) -> Result<ConfidenceInterval, StatsError> {
    if trials == 0 || successes > trials {
        return Err(StatsError::Sample { successes, trials });
    }
    check_epsilon(epsilon)?;
    let n = trials as f64;
    let ln_eps = epsilon.ln();
    let upper = if successes == trials {
        1.0
    } else if successes == 0 {
        -(ln_eps / n).exp_m1()
    } else {
        let mut lo = successes as f64 / n;
        let mut hi = 1.0;
        while hi - lo > (BISECTION_REL_TOL * hi).max(BISECTION_ABS_FLOOR) {
            let mid = 0.5 * (lo + hi);
            if binomial_cdf(successes, trials, mid) <= epsilon {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };
    let lower = if successes == 0 {
        0.0
    } else if successes == trials {
        (ln_eps / n).exp()
    } else {
        let mut lo = 0.0;
        let mut hi = successes as f64 / n;
        while hi - lo > (BISECTION_REL_TOL * hi).max(BISECTION_ABS_FLOOR) {
            let mid = 0.5 * (lo + hi);
            if binomial_sf(successes, trials, mid) <= epsilon {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    Ok(ConfidenceInterval {
        lower,
        upper,
        epsilon_per_side: epsilon,
    })
}
