//! Dense bounded-variable primal simplex for small linear programs.
//!
//! Problems here have a few dozen variables at most, so the solver keeps a
//! full tableau, uses Bland's rule throughout (no cycling, deterministic tie
//! breaks), and finishes by re-solving the final basis against the original
//! matrix to shed accumulated round-off.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid bounds: {0}")]
    Bounds(String),
    #[error("simplex did not terminate within {0} iterations")]
    IterationLimit(usize),
}

/// `lower <= coefficients . x <= upper`; either side may be infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub coefficients: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    /// Per-variable `[lo, hi]`; `lo` must be finite.
    pub variable_bounds: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub value: f64,
    pub point: Vec<f64>,
}

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-12;
const MAX_ITERATIONS: usize = 50_000;

impl LinearProgram {
    pub fn dimension(&self) -> usize {
        self.objective.len()
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.objective.len();
        if self.variable_bounds.len() != n {
            return Err(LpError::Dimension(format!(
                "{} variable bounds for {n} variables",
                self.variable_bounds.len()
            )));
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(LpError::Dimension("non-finite objective".into()));
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if c.coefficients.len() != n {
                return Err(LpError::Dimension(format!(
                    "constraint {i} has {} coefficients",
                    c.coefficients.len()
                )));
            }
            if c.coefficients.iter().any(|a| !a.is_finite()) || c.lower.is_nan() || c.upper.is_nan()
            {
                return Err(LpError::Dimension(format!("constraint {i} is not finite")));
            }
            if c.lower > c.upper {
                return Err(LpError::Bounds(format!("constraint {i}: lower > upper")));
            }
        }
        for (j, &(lo, hi)) in self.variable_bounds.iter().enumerate() {
            if !lo.is_finite() || hi.is_nan() || lo > hi {
                return Err(LpError::Bounds(format!("variable {j}: [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// Objective value at `x`.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of any bound or constraint at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (&(lo, hi), &v) in self.variable_bounds.iter().zip(x) {
            worst = worst.max(lo - v).max(v - hi);
        }
        for c in &self.constraints {
            let s: f64 = c.coefficients.iter().zip(x).map(|(a, v)| a * v).sum();
            worst = worst.max(c.lower - s).max(s - c.upper);
        }
        worst
    }
}

/// Tableau over shifted variables `x' = x - lo`, each in `[0, upper]`.
struct Tableau {
    rows: usize,
    cols: usize,
    /// Current `B^-1 A`, row-major.
    a: Vec<f64>,
    /// Original standard-form matrix and right-hand side.
    a0: Vec<f64>,
    rhs: Vec<f64>,
    /// Values of the basic variables.
    beta: Vec<f64>,
    basis: Vec<usize>,
    upper: Vec<f64>,
    at_upper: Vec<bool>,
    basic_row: Vec<Option<usize>>,
}

enum Outcome {
    Optimal,
    Unbounded,
}

impl Tableau {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.cols + j]
    }

    fn value(&self, j: usize) -> f64 {
        match self.basic_row[j] {
            Some(r) => self.beta[r],
            None if self.at_upper[j] => self.upper[j],
            None => 0.0,
        }
    }

    fn run(&mut self, cost: &[f64], iterations: &mut usize) -> Result<Outcome, LpError> {
        loop {
            *iterations += 1;
            if *iterations > MAX_ITERATIONS {
                return Err(LpError::IterationLimit(MAX_ITERATIONS));
            }
            // Bland: lowest-index improving column.
            let mut entering = None;
            for j in 0..self.cols {
                if self.basic_row[j].is_some() || self.upper[j] <= 0.0 {
                    continue;
                }
                let mut d = cost[j];
                for i in 0..self.rows {
                    let cb = cost[self.basis[i]];
                    if cb != 0.0 {
                        d -= cb * self.at(i, j);
                    }
                }
                let improving = if self.at_upper[j] {
                    d > COST_TOL
                } else {
                    d < -COST_TOL
                };
                if improving {
                    entering = Some(j);
                    break;
                }
            }
            let Some(j) = entering else {
                return Ok(Outcome::Optimal);
            };
            let dir = if self.at_upper[j] { -1.0 } else { 1.0 };

            let mut theta = self.upper[j];
            let mut leave: Option<(usize, bool)> = None;
            for i in 0..self.rows {
                let alpha = dir * self.at(i, j);
                let (limit, to_upper) = if alpha > PIVOT_TOL {
                    (self.beta[i] / alpha, false)
                } else if alpha < -PIVOT_TOL && self.upper[self.basis[i]].is_finite() {
                    ((self.upper[self.basis[i]] - self.beta[i]) / -alpha, true)
                } else {
                    continue;
                };
                let limit = limit.max(0.0);
                let tol = if theta.is_finite() {
                    1e-12 * theta.abs()
                } else {
                    0.0
                };
                let better = if limit < theta - tol {
                    true
                } else if (limit - theta).abs() <= tol {
                    matches!(leave, Some((r, _)) if self.basis[i] < self.basis[r])
                } else {
                    false
                };
                if better {
                    theta = limit;
                    leave = Some((i, to_upper));
                }
            }
            if !theta.is_finite() {
                return Ok(Outcome::Unbounded);
            }
            for i in 0..self.rows {
                let a = self.at(i, j);
                if a != 0.0 {
                    self.beta[i] -= theta * dir * a;
                }
            }
            let Some((r, to_upper)) = leave else {
                self.at_upper[j] = !self.at_upper[j];
                continue;
            };
            let entering_value = if dir > 0.0 {
                theta
            } else {
                self.upper[j] - theta
            };
            self.pivot(r, j);
            let leaving = self.basis[r];
            self.basic_row[leaving] = None;
            self.at_upper[leaving] = to_upper;
            self.basis[r] = j;
            self.basic_row[j] = Some(r);
            self.at_upper[j] = false;
            self.beta[r] = entering_value;
        }
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let cols = self.cols;
        let p = self.at(r, j);
        for k in 0..cols {
            self.a[r * cols + k] /= p;
        }
        for i in 0..self.rows {
            if i == r {
                continue;
            }
            let f = self.at(i, j);
            if f == 0.0 {
                continue;
            }
            for k in 0..cols {
                let v = self.a[r * cols + k];
                if v != 0.0 {
                    self.a[i * cols + k] -= f * v;
                }
            }
            self.a[i * cols + j] = 0.0;
        }
    }

    /// Recompute basic values from the original matrix: `B x_B = b - N x_N`.
    fn refine(&mut self) {
        let m = self.rows;
        if m == 0 {
            return;
        }
        let mut rhs = self.rhs.clone();
        for j in 0..self.cols {
            if self.basic_row[j].is_none() && self.at_upper[j] {
                for i in 0..m {
                    rhs[i] -= self.a0[i * self.cols + j] * self.upper[j];
                }
            }
        }
        let mut b = vec![0.0; m * m];
        for (k, &col) in self.basis.iter().enumerate() {
            for i in 0..m {
                b[i * m + k] = self.a0[i * self.cols + col];
            }
        }
        if let Some(x) = solve_dense(&mut b, &mut rhs, m) {
            self.beta = x;
        }
    }
}

/// Gaussian elimination with partial pivoting; `None` if singular.
fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Option<Vec<f64>> {
    for col in 0..n {
        let piv =
            (col..n).max_by(|&x, &y| a[x * n + col].abs().total_cmp(&a[y * n + col].abs()))?;
        if a[piv * n + col].abs() < 1e-300 {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            b.swap(piv, col);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            if f != 0.0 {
                for k in col..n {
                    a[row * n + k] -= f * a[col * n + k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in row + 1..n {
            s -= a[row * n + k] * x[k];
        }
        x[row] = s / a[row * n + row];
    }
    Some(x)
}

/// Minimize `objective . x` subject to the program's constraints and bounds.
///
/// Infeasibility and unboundedness are statuses, not errors; errors are
/// reserved for malformed programs.
pub fn solve_min(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    lp.validate()?;
    let n = lp.dimension();
    let lo: Vec<f64> = lp.variable_bounds.iter().map(|b| b.0).collect();

    // Split two-sided constraints into `g . x' <= h` rows.
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for c in &lp.constraints {
        let shift: f64 = c.coefficients.iter().zip(&lo).map(|(a, l)| a * l).sum();
        if c.lower.is_finite() {
            rows.push((
                c.coefficients.iter().map(|a| -a).collect(),
                -(c.lower - shift),
            ));
        }
        if c.upper.is_finite() {
            rows.push((c.coefficients.clone(), c.upper - shift));
        }
    }
    let m = rows.len();
    let artificials: Vec<usize> = (0..m).filter(|&i| rows[i].1 < 0.0).collect();
    let cols = n + m + artificials.len();

    let mut a0 = vec![0.0; m * cols];
    let mut rhs = vec![0.0; m];
    let mut basis = vec![0; m];
    let mut upper = vec![f64::INFINITY; cols];
    for (j, &(l, h)) in lp.variable_bounds.iter().enumerate() {
        upper[j] = h - l;
    }
    let mut art_iter = 0;
    for (i, (g, h)) in rows.iter().enumerate() {
        let sign = if *h < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            a0[i * cols + j] = sign * g[j];
        }
        a0[i * cols + n + i] = sign;
        rhs[i] = sign * h;
        if sign < 0.0 {
            let col = n + m + art_iter;
            a0[i * cols + col] = 1.0;
            basis[i] = col;
            art_iter += 1;
        } else {
            basis[i] = n + i;
        }
    }
    let mut basic_row = vec![None; cols];
    for (i, &b) in basis.iter().enumerate() {
        basic_row[b] = Some(i);
    }
    let mut t = Tableau {
        rows: m,
        cols,
        a: a0.clone(),
        a0,
        beta: rhs.clone(),
        rhs,
        basis,
        upper,
        at_upper: vec![false; cols],
        basic_row,
    };
    let mut iterations = 0;

    if !artificials.is_empty() {
        let mut phase1 = vec![0.0; cols];
        for c in phase1.iter_mut().skip(n + m) {
            *c = 1.0;
        }
        t.run(&phase1, &mut iterations)?;
        t.refine();
        let infeasibility: f64 = (n + m..cols).map(|j| t.value(j)).sum();
        let scale = 1.0 + t.rhs.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        if infeasibility > 1e-12 * scale {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                value: f64::NAN,
                point: Vec::new(),
            });
        }
        for j in n + m..cols {
            t.upper[j] = 0.0;
            t.at_upper[j] = false;
            if let Some(r) = t.basic_row[j] {
                t.beta[r] = 0.0;
            }
        }
    }

    let mut phase2 = vec![0.0; cols];
    phase2[..n].copy_from_slice(&lp.objective);
    if let Outcome::Unbounded = t.run(&phase2, &mut iterations)? {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            value: f64::NEG_INFINITY,
            point: Vec::new(),
        });
    }
    t.refine();
    let point: Vec<f64> = (0..n)
        .map(|j| lo[j] + t.value(j).clamp(0.0, t.upper[j]))
        .collect();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        value: lp.evaluate(&point),
        point,
    })
}
