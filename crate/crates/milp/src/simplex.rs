//! Bounded-variable dual simplex over a dense tableau.
//!
//! Every row `a·x (<=|=|>=) b` is brought to `a'·x + s = b'` with a slack
//! `s >= 0` (fixed at zero for equalities; `>=` rows are negated). The
//! all-slack basis is dual feasible once each structural variable sits at the
//! bound matching the sign of its cost, so phase one is never needed. Costs
//! that are negative on a variable without an upper bound get an artificial
//! box; a solution resting on such a box signals unboundedness.
//!
//! The same tableau is reused across branch-and-bound nodes: changing bounds
//! keeps the basis dual feasible, and the dual simplex restores primal
//! feasibility from wherever the previous node left off.

use crate::error::{MilpError, MilpResult};
use crate::model::{MilpProblem, Relation};

const PRIMAL_TOL: f64 = 1e-9;
const DUAL_TOL: f64 = 1e-10;
const PIVOT_TOL: f64 = 1e-9;
const DROP_TOL: f64 = 1e-13;
const ARTIFICIAL_BOX: f64 = 1e7;
const DEGENERATE_RUN_FOR_BLAND: usize = 50;
const REFACTOR_EVERY: usize = 4000;
const RESIDUAL_TOL: f64 = 1e-7;
const HARRIS_TOL: f64 = 1e-9;
const RELATIVE_PIVOT_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic,
    AtLower,
    AtUpper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct LpEngine {
    n: usize,
    m: usize,
    width: usize,
    /// Row-major `m × width`, equal to `B⁻¹ [A | I]`.
    tableau: Vec<f64>,
    /// Original `[A | I]`, kept for refactorization.
    original: Vec<f64>,
    rhs: Vec<f64>,
    cost: Vec<f64>,
    objective_constant: f64,
    reduced: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    boxed: Vec<bool>,
    x: Vec<f64>,
    state: Vec<VarState>,
    basis: Vec<usize>,
    pivots_since_refactor: usize,
    pub total_pivots: usize,
}

impl LpEngine {
    /// Builds the continuous relaxation of `problem`.
    pub fn new(problem: &MilpProblem) -> MilpResult<Self> {
        problem.validate()?;
        let n = problem.num_vars();
        let m = problem.constraints.len();
        let width = n + m;
        let mut original = vec![0.0; m * width];
        let mut rhs = vec![0.0; m];
        let mut lo = vec![0.0; width];
        let mut hi = vec![f64::INFINITY; width];
        for (i, c) in problem.constraints.iter().enumerate() {
            let sign = if c.relation == Relation::Ge { -1.0 } else { 1.0 };
            let row = &mut original[i * width..(i + 1) * width];
            for &(coef, v) in c.expr.terms() {
                row[v.0] += sign * coef;
            }
            row[n + i] = 1.0;
            rhs[i] = sign * (c.rhs - c.expr.constant);
            if c.relation == Relation::Eq {
                hi[n + i] = 0.0;
            }
        }
        let mut cost = vec![0.0; width];
        for &(coef, v) in problem.objective.terms() {
            cost[v.0] += coef;
        }
        let mut boxed = vec![false; width];
        let mut state = vec![VarState::AtLower; width];
        for (j, v) in problem.variables.iter().enumerate() {
            lo[j] = v.lower;
            hi[j] = v.upper;
            if cost[j] < 0.0 {
                if hi[j].is_infinite() {
                    hi[j] = lo[j] + ARTIFICIAL_BOX;
                    boxed[j] = true;
                }
                state[j] = VarState::AtUpper;
            }
        }
        let mut basis = Vec::with_capacity(m);
        for i in 0..m {
            state[n + i] = VarState::Basic;
            basis.push(n + i);
        }
        let mut engine = Self {
            n,
            m,
            width,
            tableau: original.clone(),
            original,
            rhs,
            reduced: cost.clone(),
            cost,
            objective_constant: problem.objective.constant,
            lo,
            hi,
            boxed,
            x: vec![0.0; width],
            state,
            basis,
            pivots_since_refactor: 0,
            total_pivots: 0,
        };
        engine.place_nonbasics();
        Ok(engine)
    }

    pub fn num_structural(&self) -> usize {
        self.n
    }

    pub fn bounds(&self, j: usize) -> (f64, f64) {
        (self.lo[j], self.hi[j])
    }

    /// Replaces the bounds of structural variable `j`.
    pub fn set_bounds(&mut self, j: usize, lower: f64, upper: f64) {
        debug_assert!(j < self.n);
        self.lo[j] = lower;
        if self.boxed[j] && upper.is_infinite() {
            self.hi[j] = lower.max(0.0) + ARTIFICIAL_BOX;
        } else {
            self.hi[j] = upper;
        }
    }

    /// Puts every nonbasic variable on the bound its reduced cost asks for.
    fn place_nonbasics(&mut self) {
        for j in 0..self.width {
            if self.state[j] == VarState::Basic {
                continue;
            }
            let d = self.reduced[j];
            let st = if d > DUAL_TOL {
                VarState::AtLower
            } else if d < -DUAL_TOL {
                VarState::AtUpper
            } else {
                self.state[j]
            };
            let st = if st == VarState::AtUpper && self.hi[j].is_infinite() {
                VarState::AtLower
            } else {
                st
            };
            self.state[j] = st;
            self.x[j] = match st {
                VarState::AtLower => self.lo[j],
                _ => self.hi[j],
            };
        }
    }

    /// `x_B = B⁻¹ b − Σ_nonbasic α_j x_j`, recomputed from scratch.
    fn recompute_basics(&mut self) {
        let (n, m, w) = (self.n, self.m, self.width);
        let nonbasic: Vec<(usize, f64)> = (0..w)
            .filter(|&j| self.state[j] != VarState::Basic && self.x[j] != 0.0)
            .map(|j| (j, self.x[j]))
            .collect();
        for i in 0..m {
            let row = &self.tableau[i * w..(i + 1) * w];
            let mut v = 0.0;
            for k in 0..m {
                let binv = row[n + k];
                if binv != 0.0 {
                    v += binv * self.rhs[k];
                }
            }
            for &(j, xj) in &nonbasic {
                v -= row[j] * xj;
            }
            self.x[self.basis[i]] = v;
        }
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let w = self.width;
        let piv = self.tableau[r * w + q];
        let inv = 1.0 / piv;
        {
            let row = &mut self.tableau[r * w..(r + 1) * w];
            for v in row.iter_mut() {
                if *v != 0.0 {
                    *v *= inv;
                }
            }
            row[q] = 1.0;
        }
        let nz: Vec<usize> = (0..w).filter(|&j| self.tableau[r * w + j] != 0.0).collect();
        let prow: Vec<f64> = nz.iter().map(|&j| self.tableau[r * w + j]).collect();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.tableau[i * w + q];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.tableau[i * w..(i + 1) * w];
            for (&j, &p) in nz.iter().zip(&prow) {
                let v = row[j] - f * p;
                row[j] = if v.abs() < DROP_TOL { 0.0 } else { v };
            }
            row[q] = 0.0;
        }
        let f = self.reduced[q];
        if f != 0.0 {
            for (&j, &p) in nz.iter().zip(&prow) {
                let v = self.reduced[j] - f * p;
                self.reduced[j] = if v.abs() < DROP_TOL { 0.0 } else { v };
            }
            self.reduced[q] = 0.0;
        }
        self.pivots_since_refactor += 1;
        self.total_pivots += 1;
    }

    /// Rebuilds `B⁻¹ [A | I]` and the reduced costs from the original data
    /// for the current basis, discarding accumulated round-off.
    pub fn refactor(&mut self) {
        let (m, w) = (self.m, self.width);
        let mut t = self.original.clone();
        let basic_cols: Vec<usize> = self.basis.clone();
        let mut assigned = vec![false; m];
        let mut new_basis = vec![usize::MAX; m];
        for &col in &basic_cols {
            let mut best = None;
            let mut best_abs = 1e-12;
            for i in 0..m {
                if assigned[i] {
                    continue;
                }
                let a = t[i * w + col].abs();
                if a > best_abs {
                    best_abs = a;
                    best = Some(i);
                }
            }
            let Some(r) = best else {
                self.reset_to_slack_basis();
                return;
            };
            assigned[r] = true;
            new_basis[r] = col;
            let inv = 1.0 / t[r * w + col];
            for j in 0..w {
                t[r * w + j] *= inv;
            }
            let prow: Vec<f64> = t[r * w..(r + 1) * w].to_vec();
            for i in 0..m {
                if i == r {
                    continue;
                }
                let f = t[i * w + col];
                if f == 0.0 {
                    continue;
                }
                for j in 0..w {
                    if prow[j] != 0.0 {
                        let v = t[i * w + j] - f * prow[j];
                        t[i * w + j] = if v.abs() < DROP_TOL { 0.0 } else { v };
                    }
                }
                t[i * w + col] = 0.0;
            }
        }
        self.tableau = t;
        self.basis = new_basis;
        let mut d = self.cost.clone();
        for i in 0..m {
            let cb = self.cost[self.basis[i]];
            if cb == 0.0 {
                continue;
            }
            let row = &self.tableau[i * w..(i + 1) * w];
            for j in 0..w {
                if row[j] != 0.0 {
                    d[j] -= cb * row[j];
                }
            }
        }
        for i in 0..m {
            d[self.basis[i]] = 0.0;
        }
        self.reduced = d;
        self.pivots_since_refactor = 0;
    }

    /// Falls back to the all-slack basis, which is dual feasible for any bounds.
    fn reset_to_slack_basis(&mut self) {
        let (n, m) = (self.n, self.m);
        self.tableau = self.original.clone();
        self.reduced = self.cost.clone();
        for j in 0..n {
            self.state[j] = if self.cost[j] < 0.0 && self.hi[j].is_finite() { VarState::AtUpper } else { VarState::AtLower };
        }
        for i in 0..m {
            self.state[n + i] = VarState::Basic;
            self.basis[i] = n + i;
        }
        self.pivots_since_refactor = 0;
    }

    /// Largest violation of the original rows by the current point.
    fn row_residual(&self) -> f64 {
        let w = self.width;
        (0..self.m)
            .map(|i| {
                let row = &self.original[i * w..(i + 1) * w];
                let lhs: f64 = row.iter().zip(&self.x).filter(|(a, _)| **a != 0.0).map(|(a, x)| a * x).sum();
                (lhs - self.rhs[i]).abs() / (1.0 + self.rhs[i].abs())
            })
            .fold(0.0, f64::max)
    }

    /// Runs the dual simplex from the current basis.
    pub fn solve(&mut self) -> MilpResult<LpStatus> {
        if self.pivots_since_refactor > REFACTOR_EVERY {
            self.refactor();
        }
        self.place_nonbasics();
        self.recompute_basics();
        let w = self.width;
        let max_iter = 50 * (self.m + self.n) + 1000;
        let mut degenerate_run = 0usize;
        let mut fresh = true;
        let mut verified = false;
        let mut rebuilt = false;
        for _ in 0..max_iter {
            let bland = degenerate_run >= DEGENERATE_RUN_FOR_BLAND;
            // Leaving row: largest bound violation, or smallest variable index under Bland.
            let mut leave: Option<(usize, bool)> = None;
            let mut best = 0.0;
            let mut best_idx = usize::MAX;
            for i in 0..self.m {
                let b = self.basis[i];
                let v = self.x[b];
                let (infeas, up) = if v < self.lo[b] - PRIMAL_TOL {
                    (self.lo[b] - v, true)
                } else if v > self.hi[b] + PRIMAL_TOL {
                    (v - self.hi[b], false)
                } else {
                    continue;
                };
                let better = if bland { b < best_idx } else { infeas > best };
                if better {
                    best = infeas;
                    best_idx = b;
                    leave = Some((i, up));
                }
            }
            let Some((r, up)) = leave else {
                if fresh {
                    if self.row_residual() <= RESIDUAL_TOL {
                        return Ok(LpStatus::Optimal);
                    }
                    // The tableau no longer represents the rows; rebuild it, or start over.
                    if rebuilt {
                        self.reset_to_slack_basis();
                    } else {
                        self.refactor();
                        rebuilt = true;
                    }
                    self.place_nonbasics();
                    self.recompute_basics();
                    degenerate_run = 0;
                    continue;
                }
                // Incremental updates drift; confirm against values rebuilt from the basis.
                self.recompute_basics();
                fresh = true;
                continue;
            };
            fresh = false;
            let row = &self.tableau[r * w..(r + 1) * w];
            // Harris two-pass ratio test: among near-minimal ratios take the largest pivot.
            let mut candidates: Vec<(usize, f64, f64)> = Vec::new();
            let pivot_floor = PIVOT_TOL.max(RELATIVE_PIVOT_TOL * row.iter().fold(0.0, |m: f64, a| m.max(a.abs())));
            for j in 0..w {
                let st = self.state[j];
                if st == VarState::Basic || self.hi[j] - self.lo[j] <= 0.0 {
                    continue;
                }
                let a = row[j];
                if a.abs() < PIVOT_TOL {
                    continue;
                }
                let at_lo = st == VarState::AtLower;
                let eligible = if up { (at_lo && a < 0.0) || (!at_lo && a > 0.0) } else { (at_lo && a > 0.0) || (!at_lo && a < 0.0) };
                if !eligible {
                    continue;
                }
                let slack = if at_lo { self.reduced[j] } else { -self.reduced[j] }.max(0.0);
                candidates.push((j, a.abs(), slack));
            }
            // Tiny pivots are a last resort.
            if candidates.iter().any(|c| c.1 >= pivot_floor) {
                candidates.retain(|c| c.1 >= pivot_floor);
            }
            let bound = candidates.iter().map(|&(_, a, slack)| (slack + HARRIS_TOL) / a).fold(f64::INFINITY, f64::min);
            let mut enter: Option<usize> = None;
            let mut best_ratio = f64::INFINITY;
            let mut best_abs = 0.0;
            for &(j, a, slack) in &candidates {
                let ratio = slack / a;
                if ratio > bound {
                    continue;
                }
                let take = if bland { enter.is_none() } else { a > best_abs };
                if take {
                    enter = Some(j);
                    best_ratio = ratio;
                    best_abs = a;
                }
            }
            let Some(q) = enter else {
                // Confirm the certificate on values and a tableau rebuilt from the basis.
                if !verified {
                    self.refactor();
                    self.place_nonbasics();
                    self.recompute_basics();
                    verified = true;
                    fresh = true;
                    continue;
                }
                return Ok(LpStatus::Infeasible);
            };
            if best_ratio <= 1e-12 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            let b = self.basis[r];
            let target = if up { self.lo[b] } else { self.hi[b] };
            let alpha = self.tableau[r * w + q];
            let step = (self.x[b] - target) / alpha;
            for i in 0..self.m {
                let a = self.tableau[i * w + q];
                if a != 0.0 {
                    self.x[self.basis[i]] -= a * step;
                }
            }
            self.x[q] += step;
            self.x[b] = target;
            self.pivot(r, q);
            self.basis[r] = q;
            self.state[q] = VarState::Basic;
            self.state[b] = if up { VarState::AtLower } else { VarState::AtUpper };
        }
        Err(MilpError::IterationLimit)
    }

    /// Structural variable values of the last solve.
    pub fn values(&self) -> Vec<f64> {
        self.x[..self.n].to_vec()
    }

    pub fn objective(&self) -> f64 {
        self.objective_constant + (0..self.n).map(|j| self.cost[j] * self.x[j]).sum::<f64>()
    }

    /// True when some variable rests on an artificial box bound, i.e. the
    /// relaxation (and therefore the problem) is unbounded.
    pub fn hits_artificial_box(&self) -> bool {
        (0..self.n).any(|j| self.boxed[j] && self.x[j] >= self.hi[j] - 1e-6 && self.hi[j] >= ARTIFICIAL_BOX * 0.5)
    }
}
