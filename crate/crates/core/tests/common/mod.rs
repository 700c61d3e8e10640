//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use proptest::prelude::*;
use qkd_core::channel::ChannelModel;
use qkd_core::lp::{Constraint, LinearProgram};
use qkd_core::rng::{Domain, StreamRng};
use qkd_core::sim::DecoyConfig;

/// Minimum over all vertices of a bounded polytope (every vertex is the
/// intersection of `n` active hyperplanes). `None` if no vertex is feasible.
pub fn vertex_minimum(lp: &LinearProgram) -> Option<f64> {
    let n = lp.objective.len();
    let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
    for (j, &(lo, hi)) in lp.variable_bounds.iter().enumerate() {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        planes.push((e.clone(), lo));
        planes.push((e, hi));
    }
    for c in &lp.constraints {
        for side in [c.lower, c.upper] {
            if side.is_finite() {
                planes.push((c.coefficients.clone(), side));
            }
        }
    }
    let rhs = lp
        .constraints
        .iter()
        .flat_map(|c| [c.lower.abs(), c.upper.abs()])
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let tol = 1e-12 + 1e-9 * rhs.min(1.0);
    let mut best: Option<f64> = None;
    let mut pick = vec![0usize; n];
    walk(0, 0, &mut pick, &planes, lp, tol, &mut best);
    best
}

fn walk(
    start: usize,
    depth: usize,
    pick: &mut Vec<usize>,
    planes: &[(Vec<f64>, f64)],
    lp: &LinearProgram,
    tol: f64,
    best: &mut Option<f64>,
) {
    let n = pick.len();
    if depth == n {
        let mut a: Vec<Vec<f64>> = pick.iter().map(|&p| planes[p].0.clone()).collect();
        let mut b: Vec<f64> = pick.iter().map(|&p| planes[p].1).collect();
        if let Some(x) = gauss(&mut a, &mut b) {
            if lp.max_violation(&x) <= tol {
                let v = lp.evaluate(&x);
                *best = Some(best.map_or(v, |b: f64| b.min(v)));
            }
        }
        return;
    }
    for p in start..planes.len() {
        pick[depth] = p;
        walk(p + 1, depth + 1, pick, planes, lp, tol, best);
    }
}

fn gauss(a: &mut [Vec<f64>], b: &mut [f64]) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-12 {
            return None;
        }
        a.swap(p, c);
        b.swap(p, c);
        let (pivot, bc) = (a[c].clone(), b[c]);
        for (r, row) in a.iter_mut().enumerate() {
            if r != c {
                let f = row[c] / pivot[c];
                for (x, p) in row.iter_mut().zip(&pivot) {
                    *x -= f * p;
                }
                b[r] -= f * bc;
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

/// Neumaier-compensated sum.
fn compensated_sum(terms: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for t in terms {
        let s = sum + t;
        if sum.abs() >= t.abs() {
            c += (sum - s) + t;
        } else {
            c += (t - s) + sum;
        }
        sum = s;
    }
    sum + c
}

/// Binomial tail oracle by direct term summation from `k`, with the log of
/// the binomial coefficient accumulated term by term.
pub struct TailOracle {
    n: u64,
    k: u64,
    ln_choose: f64,
}

impl TailOracle {
    pub fn new(n: u64, k: u64) -> Self {
        let m = k.min(n - k);
        let ln_choose = compensated_sum((1..=m).map(|i| (((n - m + i) as f64) / i as f64).ln()));
        Self { n, k, ln_choose }
    }

    fn ln_pmf_k(&self, p: f64) -> f64 {
        let (n, k) = (self.n as f64, self.k as f64);
        compensated_sum([self.ln_choose, k * p.ln(), (n - k) * (-p).ln_1p()].into_iter())
    }

    /// `P[X >= k]`.
    pub fn upper_tail(&self, p: f64) -> f64 {
        let mut term = self.ln_pmf_k(p).exp();
        let mut sum = 0.0;
        let ratio = p / (1.0 - p);
        let mut i = self.k;
        while term > 0.0 && i <= self.n {
            sum += term;
            if term < sum * 1e-18 {
                break;
            }
            term *= (self.n - i) as f64 / (i + 1) as f64 * ratio;
            i += 1;
        }
        sum
    }

    /// `P[X <= k]`.
    pub fn lower_tail(&self, p: f64) -> f64 {
        let mut term = self.ln_pmf_k(p).exp();
        let mut sum = 0.0;
        let ratio = (1.0 - p) / p;
        let mut i = self.k;
        loop {
            sum += term;
            if i == 0 || term < sum * 1e-18 {
                break;
            }
            term *= i as f64 / (self.n - i + 1) as f64 * ratio;
            i -= 1;
        }
        sum
    }
}

fn bisect(mut lo: f64, mut hi: f64, mut above: impl FnMut(f64) -> bool) -> (f64, f64) {
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 1e-16 * hi {
            break;
        }
        if above(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (lo, hi)
}

/// One-sided exact bounds by bisection on the oracle tails.
pub fn oracle_bounds(k: u64, n: u64, eps: f64) -> (f64, f64) {
    let phat = k as f64 / n as f64;
    let lower = if k == 0 {
        0.0
    } else {
        let o = TailOracle::new(n, k);
        bisect(0.0, phat, |p| o.upper_tail(p) > eps).0
    };
    let upper = if k == n {
        1.0
    } else {
        let o = TailOracle::new(n, k);
        bisect(phat, 1.0, |p| o.lower_tail(p) < eps).1
    };
    (lower, upper)
}

pub fn uniform_in(rng: &mut StreamRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.uniform()
}

/// A random fiber link with parameters spanning practical hardware.
pub fn random_channel(rng: &mut StreamRng) -> ChannelModel {
    ChannelModel {
        fiber_length_km: uniform_in(rng, 10.0, 110.0),
        attenuation_db_per_km: uniform_in(rng, 0.18, 0.25),
        detector_efficiencies: [uniform_in(rng, 0.1, 0.6), uniform_in(rng, 0.1, 0.6)],
        background_yield: 10f64.powf(uniform_in(rng, -7.0, -5.0)),
        visibility_error: uniform_in(rng, 0.005, 0.05),
        window_acceptance: uniform_in(rng, 0.1, 1.0),
    }
}

/// A random valid three-level configuration with about `cycles` clock cycles.
pub fn random_config(rng: &mut StreamRng, cycles: f64) -> DecoyConfig {
    let mu0 = uniform_in(rng, 0.2, 0.6);
    let mu1 = mu0 * uniform_in(rng, 0.15, 0.5);
    let mu2 = mu0 * uniform_in(rng, 0.0, 0.01);
    let p1 = uniform_in(rng, 0.08, 0.2);
    let p2 = uniform_in(rng, 0.03, 0.08);
    DecoyConfig {
        intensities: [mu0, mu1, mu2],
        send_probabilities: [1.0 - p1 - p2, p1, p2],
        clock_rate_hz: cycles,
        duration_s: 1.0,
        epsilon: 1e-7,
    }
}

pub fn test_rng(stream: u64) -> StreamRng {
    StreamRng::new(0x5eed, Domain::Test, stream)
}

/// Alice's random string and Bob's copy with exactly `round(n * rate)` errors.
pub fn noisy_pair(n: usize, rate: f64, seed: u64) -> (Vec<u8>, Vec<u8>) {
    let mut rng = StreamRng::new(seed, Domain::Test, 0);
    let alice: Vec<u8> = (0..n).map(|_| rng.bit()).collect();
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    let mut bob = alice.clone();
    for &i in &idx[..(n as f64 * rate).round() as usize] {
        bob[i] ^= 1;
    }
    (alice, bob)
}

/// The `(k, n, eps)` grid used to check exact intervals.
pub fn interval_grid() -> Vec<(u64, u64, f64)> {
    let ns: [u64; 10] = [
        1,
        7,
        50,
        1_000,
        40_000,
        1_000_000,
        95_220_000,
        254_610_000,
        1_000_000_000,
        1_720_170_000,
    ];
    let eps = [1e-7, 1e-3, 0.05, 1e-10, 0.3, 1e-5];
    let mut cases = Vec::new();
    for &n in &ns {
        let mut ks: Vec<u64> = vec![0, 1, 2, 3, 10, 129, 4291, 9431, 190_000, 220_000];
        ks.extend([n / 2, n - 1, n]);
        ks.retain(|&k| k <= n && k.min(n - k) <= 1_000_000);
        ks.sort_unstable();
        ks.dedup();
        for &k in &ks {
            for &e in &eps {
                cases.push((k, n, e));
            }
        }
    }
    cases
}

/// Random bounded programs with up to 4 variables and small integer data.
pub fn small_program() -> impl Strategy<Value = LinearProgram> {
    (1usize..=4, 0usize..=6).prop_flat_map(|(n, m)| {
        let bounds = prop::collection::vec((-3i32..=1, 0i32..=4), n);
        let objective = prop::collection::vec(-5i32..=5, n);
        let rows = prop::collection::vec(
            (
                prop::collection::vec(-4i32..=4, n),
                -6i32..=6,
                0i32..=6,
                0u8..3,
            ),
            m,
        );
        (objective, bounds, rows).prop_map(|(objective, bounds, rows)| LinearProgram {
            objective: objective.into_iter().map(f64::from).collect(),
            variable_bounds: bounds
                .into_iter()
                .map(|(lo, w)| (f64::from(lo), f64::from(lo + w)))
                .collect(),
            constraints: rows
                .into_iter()
                .map(|(coef, lo, w, kind)| {
                    let lo = f64::from(lo);
                    let hi = lo + f64::from(w);
                    let (lower, upper) = match kind {
                        0 => (lo, f64::INFINITY),
                        1 => (f64::NEG_INFINITY, hi),
                        _ => (lo, hi),
                    };
                    Constraint {
                        coefficients: coef.into_iter().map(f64::from).collect(),
                        lower,
                        upper,
                    }
                })
                .collect(),
        })
    })
}
