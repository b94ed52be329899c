//! Self-contained linear-program solver for star-set bound queries:
//! maximize a linear objective over `{a : C a <= d, lb <= a <= ub}`.
//!
//! Bounded-variable primal simplex on a dense `B^-1`. Slacks turn the
//! inequality rows into equalities; rows violated at the starting point get a
//! phase-1 artificial. Pivoting starts with Dantzig pricing and falls back to
//! Bland's rule after `2*(m+p)` iterations so cycling cannot occur. All alpha
//! variables carry finite boxes by construction of the star sets, so no
//! unbounded rays exist; hitting one anyway reports an error instead of a
//! silent wrong answer.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

const OPT_TOL: f64 = 1e-9;
const PIV_TOL: f64 = 1e-9;
const INFEAS_TOL: f64 = 1e-8;
const RATIO_TIE_TOL: f64 = 1e-12;
const POINT_CLAMP_TOL: f64 = 1e-7;

/// `maximize objective . a  s.t.  constraints . a <= rhs, lower <= a <= upper`.
#[derive(Clone, Debug)]
pub struct LinearProgram {
    pub objective: Array1<f64>,
    pub constraints: Array2<f64>,
    pub rhs: Array1<f64>,
    pub lower: Array1<f64>,
    pub upper: Array1<f64>,
}

impl LinearProgram {
    pub fn new(
        objective: Array1<f64>,
        constraints: Array2<f64>,
        rhs: Array1<f64>,
        lower: Array1<f64>,
        upper: Array1<f64>,
    ) -> Result<Self> {
        let m = objective.len();
        if constraints.ncols() != m && constraints.nrows() > 0 {
            return Err(Error::Lp(format!(
                "constraint matrix has {} columns for {} variables",
                constraints.ncols(),
                m
            )));
        }
        if constraints.nrows() != rhs.len() {
            return Err(Error::Lp(format!(
                "{} constraint rows but {} right-hand sides",
                constraints.nrows(),
                rhs.len()
            )));
        }
        if lower.len() != m || upper.len() != m {
            return Err(Error::Lp("box bound length mismatch".into()));
        }
        for j in 0..m {
            if !lower[j].is_finite() || !upper[j].is_finite() {
                return Err(Error::Lp(format!("variable {j} has a non-finite bound")));
            }
            if lower[j] > upper[j] {
                return Err(Error::Lp(format!(
                    "variable {j} has lower bound {} above upper bound {}",
                    lower[j], upper[j]
                )));
            }
        }
        if objective.iter().any(|v| !v.is_finite())
            || constraints.iter().any(|v| !v.is_finite())
            || rhs.iter().any(|v| !v.is_finite())
        {
            return Err(Error::Lp("non-finite coefficient".into()));
        }
        Ok(LinearProgram {
            objective,
            constraints,
            rhs,
            lower,
            upper,
        })
    }

    /// Box-constrained program with no linear constraint rows.
    pub fn box_only(objective: Array1<f64>, lower: Array1<f64>, upper: Array1<f64>) -> Result<Self> {
        let m = objective.len();
        LinearProgram::new(objective, Array2::zeros((0, m)), Array1::zeros(0), lower, upper)
    }
}

/// Result of a bound query.
#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    Optimal { value: f64, point: Array1<f64> },
    Infeasible,
}

impl LpOutcome {
    /// Unwrap the optimal value, mapping `Infeasible` to an error.
    pub fn value(&self) -> Result<f64> {
        match self {
            LpOutcome::Optimal { value, .. } => Ok(*value),
            LpOutcome::Infeasible => Err(Error::Lp("unexpected infeasible program".into())),
        }
    }
}

pub fn maximize(lp: &LinearProgram) -> Result<LpOutcome> {
    match solve(lp, false) {
        Ok(out) => Ok(out),
        // One retry on a pure-Bland pivot path before giving up; a different
        // pivot sequence often escapes a near-degenerate corner.
        Err(Error::Lp(_)) => solve(lp, true),
        Err(e) => Err(e),
    }
}

pub fn minimize(lp: &LinearProgram) -> Result<LpOutcome> {
    let negated = LinearProgram {
        objective: lp.objective.mapv(|v| -v),
        constraints: lp.constraints.clone(),
        rhs: lp.rhs.clone(),
        lower: lp.lower.clone(),
        upper: lp.upper.clone(),
    };
    Ok(match maximize(&negated)? {
        LpOutcome::Optimal { value, point } => LpOutcome::Optimal { value: -value, point },
        LpOutcome::Infeasible => LpOutcome::Infeasible,
    })
}

/// Phase-one feasibility check for `{a : C a <= d, lb <= a <= ub}`.
pub fn is_feasible(
    constraints: &Array2<f64>,
    rhs: &Array1<f64>,
    lower: &Array1<f64>,
    upper: &Array1<f64>,
) -> Result<bool> {
    let lp = LinearProgram::new(
        Array1::zeros(lower.len()),
        constraints.clone(),
        rhs.clone(),
        lower.clone(),
        upper.clone(),
    )?;
    Ok(matches!(maximize(&lp)?, LpOutcome::Optimal { .. }))
}

fn solve(lp: &LinearProgram, bland_from_start: bool) -> Result<LpOutcome> {
    let m = lp.objective.len();
    if m == 0 {
        // Zero-dimensional coefficient space: feasible iff every rhs is
        // non-negative, and the optimum is the empty point.
        return Ok(if lp.rhs.iter().all(|&d| d >= -INFEAS_TOL) {
            LpOutcome::Optimal { value: 0.0, point: Array1::zeros(0) }
        } else {
            LpOutcome::Infeasible
        });
    }
    let mut s = Simplex::new(lp, bland_from_start);
    if !s.phase_one()? {
        return Ok(LpOutcome::Infeasible);
    }
    s.phase_two()?;
    let point = s.extract_point()?;
    // Verify the witness against the original data; the simplex state is not
    // trusted for the final answer.
    for i in 0..lp.constraints.nrows() {
        let lhs = lp.constraints.row(i).dot(&point);
        if lhs > lp.rhs[i] + INFEAS_TOL {
            return Err(Error::Lp(format!(
                "solution violates constraint {i} by {:.3e}",
                lhs - lp.rhs[i]
            )));
        }
    }
    let value = lp.objective.dot(&point);
    Ok(LpOutcome::Optimal { value, point })
}

struct Simplex<'a> {
    lp: &'a LinearProgram,
    m: usize,
    p: usize,
    /// Per-variable bounds: structurals, then slacks, then artificials.
    lb: Vec<f64>,
    ub: Vec<f64>,
    cost: Vec<f64>,
    /// Constraint row of each artificial variable.
    art_rows: Vec<usize>,
    basis: Vec<usize>,
    in_basis: Vec<bool>,
    at_upper: Vec<bool>,
    binv: Array2<f64>,
    xb: Vec<f64>,
    bland_from_start: bool,
}

impl<'a> Simplex<'a> {
    fn new(lp: &'a LinearProgram, bland_from_start: bool) -> Self {
        let m = lp.objective.len();
        let p = lp.constraints.nrows();
        let mut lb: Vec<f64> = lp.lower.to_vec();
        let mut ub: Vec<f64> = lp.upper.to_vec();
        lb.extend(std::iter::repeat_n(0.0, p));
        ub.extend(std::iter::repeat_n(f64::INFINITY, p));

        // Start with every structural at its lower bound and the slack basis.
        let mut xb = vec![0.0; p];
        for i in 0..p {
            xb[i] = lp.rhs[i] - lp.constraints.row(i).dot(&lp.lower);
        }
        let mut basis: Vec<usize> = (m..m + p).collect();
        let mut in_basis = vec![false; m + p];
        let mut binv = Array2::eye(p);
        let mut art_rows = Vec::new();

        // Rows violated at the start get an artificial with column -e_i so the
        // initial basis is feasible for phase one.
        for i in 0..p {
            if xb[i] < -PIV_TOL {
                let art = m + p + art_rows.len();
                art_rows.push(i);
                basis[i] = art;
                binv[(i, i)] = -1.0;
                xb[i] = -xb[i];
                lb.push(0.0);
                ub.push(f64::INFINITY);
            }
        }
        for &b in &basis {
            if b < in_basis.len() {
                in_basis[b] = true;
            }
        }
        in_basis.resize(m + p + art_rows.len(), true);
        let n = in_basis.len();

        Simplex {
            lp,
            m,
            p,
            lb,
            ub,
            cost: vec![0.0; n],
            art_rows,
            basis,
            in_basis,
            at_upper: vec![false; n],
            binv,
            xb,
            bland_from_start,
        }
    }

    fn num_vars(&self) -> usize {
        self.in_basis.len()
    }

    /// Column `j` of the working constraint matrix applied to a row vector.
    fn col_dot(&self, y: &[f64], j: usize) -> f64 {
        if j < self.m {
            (0..self.p).map(|k| y[k] * self.lp.constraints[(k, j)]).sum()
        } else if j < self.m + self.p {
            y[j - self.m]
        } else {
            -y[self.art_rows[j - self.m - self.p]]
        }
    }

    /// `B^-1 A_j` for column `j`.
    fn column_through_binv(&self, j: usize) -> Vec<f64> {
        let mut w = vec![0.0; self.p];
        if j < self.m {
            for i in 0..self.p {
                let mut acc = 0.0;
                for k in 0..self.p {
                    acc += self.binv[(i, k)] * self.lp.constraints[(k, j)];
                }
                w[i] = acc;
            }
        } else if j < self.m + self.p {
            let r = j - self.m;
            for i in 0..self.p {
                w[i] = self.binv[(i, r)];
            }
        } else {
            let r = self.art_rows[j - self.m - self.p];
            for i in 0..self.p {
                w[i] = -self.binv[(i, r)];
            }
        }
        w
    }

    fn nonbasic_value(&self, j: usize) -> f64 {
        if self.at_upper[j] {
            self.ub[j]
        } else {
            self.lb[j]
        }
    }

    fn recompute_basic_values(&mut self) {
        let mut r_eff: Vec<f64> = self.lp.rhs.to_vec();
        for j in 0..self.num_vars() {
            if self.in_basis[j] {
                continue;
            }
            let v = self.nonbasic_value(j);
            if v == 0.0 {
                continue;
            }
            if j < self.m {
                for i in 0..self.p {
                    r_eff[i] -= self.lp.constraints[(i, j)] * v;
                }
            } else if j < self.m + self.p {
                r_eff[j - self.m] -= v;
            } else {
                r_eff[self.art_rows[j - self.m - self.p]] += v;
            }
        }
        for i in 0..self.p {
            let mut acc = 0.0;
            for k in 0..self.p {
                acc += self.binv[(i, k)] * r_eff[k];
            }
            self.xb[i] = acc;
        }
    }

    fn phase_one(&mut self) -> Result<bool> {
        if self.art_rows.is_empty() {
            return Ok(true);
        }
        for c in self.cost.iter_mut() {
            *c = 0.0;
        }
        for a in 0..self.art_rows.len() {
            self.cost[self.m + self.p + a] = -1.0;
        }
        self.optimize()?;
        let infeasibility: f64 = (0..self.p)
            .filter(|&i| self.basis[i] >= self.m + self.p)
            .map(|i| self.xb[i])
            .sum();
        if infeasibility > INFEAS_TOL {
            return Ok(false);
        }
        // Lock artificials at zero for phase two.
        for a in 0..self.art_rows.len() {
            let j = self.m + self.p + a;
            self.ub[j] = 0.0;
            if !self.in_basis[j] {
                self.at_upper[j] = false;
            }
        }
        Ok(true)
    }

    fn phase_two(&mut self) -> Result<()> {
        for j in 0..self.num_vars() {
            self.cost[j] = if j < self.m { self.lp.objective[j] } else { 0.0 };
        }
        self.recompute_basic_values();
        self.optimize()
    }

    fn optimize(&mut self) -> Result<()> {
        let bland_after = if self.bland_from_start {
            0
        } else {
            2 * (self.m + self.p)
        };
        let hard_cap = 200 * (self.num_vars() + self.p) + 2000;
        for iter in 0..=hard_cap {
            let bland = iter >= bland_after;

            let mut y = vec![0.0; self.p];
            for i in 0..self.p {
                let c = self.cost[self.basis[i]];
                if c != 0.0 {
                    for k in 0..self.p {
                        y[k] += c * self.binv[(i, k)];
                    }
                }
            }

            let mut entering: Option<(usize, f64, f64)> = None; // (var, score, dir)
            for j in 0..self.num_vars() {
                if self.in_basis[j] || self.lb[j] == self.ub[j] {
                    continue;
                }
                let r = self.cost[j] - self.col_dot(&y, j);
                let (eligible, dir, score) = if self.at_upper[j] {
                    (r < -OPT_TOL, -1.0, -r)
                } else {
                    (r > OPT_TOL, 1.0, r)
                };
                if !eligible {
                    continue;
                }
                if bland {
                    entering = Some((j, score, dir));
                    break;
                }
                if entering.is_none_or(|(_, best, _)| score > best) {
                    entering = Some((j, score, dir));
                }
            }
            let Some((t, _, dir)) = entering else {
                return Ok(());
            };

            let w = self.column_through_binv(t);
            let mut delta = self.ub[t] - self.lb[t]; // may be infinite (slacks)
            let mut leave: Option<(usize, bool)> = None;
            for i in 0..self.p {
                let coef = dir * w[i];
                let b = self.basis[i];
                let (limit, hits_upper) = if coef > PIV_TOL {
                    (((self.xb[i] - self.lb[b]) / coef).max(0.0), false)
                } else if coef < -PIV_TOL && self.ub[b].is_finite() {
                    (((self.xb[i] - self.ub[b]) / coef).max(0.0), true)
                } else {
                    continue;
                };
                let better = match leave {
                    _ if limit < delta - RATIO_TIE_TOL => true,
                    None => limit <= delta + RATIO_TIE_TOL && limit < delta,
                    Some((r, _)) if limit <= delta + RATIO_TIE_TOL => {
                        if bland {
                            self.basis[i] < self.basis[r]
                        } else {
                            w[i].abs() > w[r].abs()
                        }
                    }
                    _ => false,
                };
                if better {
                    delta = delta.min(limit);
                    leave = Some((i, hits_upper));
                }
            }

            if delta.is_infinite() {
                return Err(Error::Lp(
                    "unbounded improving direction; the box should preclude this".into(),
                ));
            }

            for i in 0..self.p {
                self.xb[i] -= dir * delta * w[i];
            }
            match leave {
                None => {
                    // Bound flip: the entering variable crosses its own span.
                    self.at_upper[t] = !self.at_upper[t];
                }
                Some((row, hits_upper)) => {
                    let entering_val = self.nonbasic_value(t) + dir * delta;
                    let leaving = self.basis[row];
                    self.in_basis[leaving] = false;
                    self.at_upper[leaving] = hits_upper;
                    self.basis[row] = t;
                    self.in_basis[t] = true;
                    self.xb[row] = entering_val;

                    let pivot = w[row];
                    if pivot.abs() < PIV_TOL {
                        return Err(Error::Lp(format!("pivot {pivot:.3e} below tolerance")));
                    }
                    let scaled: Vec<f64> =
                        (0..self.p).map(|k| self.binv[(row, k)] / pivot).collect();
                    for i in 0..self.p {
                        if i == row {
                            continue;
                        }
                        let f = w[i];
                        if f != 0.0 {
                            for k in 0..self.p {
                                self.binv[(i, k)] -= f * scaled[k];
                            }
                        }
                    }
                    for k in 0..self.p {
                        self.binv[(row, k)] = scaled[k];
                    }
                }
            }
        }
        Err(Error::Lp(format!(
            "no convergence within {hard_cap} pivots; degeneracy beyond tolerance"
        )))
    }

    fn extract_point(&self) -> Result<Array1<f64>> {
        let mut point = Array1::zeros(self.m);
        for j in 0..self.m {
            point[j] = self.nonbasic_value(j);
        }
        for i in 0..self.p {
            if self.basis[i] < self.m {
                point[self.basis[i]] = self.xb[i];
            }
        }
        for j in 0..self.m {
            let (lo, hi) = (self.lp.lower[j], self.lp.upper[j]);
            if point[j] < lo - POINT_CLAMP_TOL || point[j] > hi + POINT_CLAMP_TOL {
                return Err(Error::Lp(format!(
                    "variable {j} drifted to {} outside [{lo}, {hi}]",
                    point[j]
                )));
            }
            point[j] = point[j].clamp(lo, hi);
        }
        Ok(point)
    }
}
