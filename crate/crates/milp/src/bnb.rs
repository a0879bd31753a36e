use std::time::Instant;

use crate::error::{MilpError, MilpResult};
use crate::model::{MilpProblem, VarId};
use crate::simplex::{LpEngine, LpStatus};
use crate::verify::verify;

pub const INTEGRALITY_TOL: f64 = 1e-6;
pub const OPTIMALITY_GAP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SolveParams {
    /// Absolute gap at which the search stops.
    pub gap_tol: f64,
    /// Wall-clock budget. Breaks run-to-run determinism when it fires; use
    /// `node_limit` where reproducibility matters.
    pub time_limit_ms: Option<u64>,
    /// Deterministic work budget in branch-and-bound nodes.
    pub node_limit: Option<usize>,
    /// Reserved for randomized strategies; the search itself is deterministic.
    pub seed: u64,
}

impl Default for SolveParams {
    fn default() -> Self {
        Self {
            gap_tol: OPTIMALITY_GAP,
            time_limit_ms: None,
            node_limit: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    GapLimit,
    TimeLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilpSolution {
    pub status: SolveStatus,
    /// One value per variable in declaration order; empty without an incumbent.
    pub values: Vec<f64>,
    pub objective_value: f64,
    /// Best known lower bound on the optimum.
    pub bound: f64,
    /// Objective of the root LP relaxation.
    pub root_bound: f64,
    pub nodes: usize,
}

impl MilpSolution {
    pub fn infeasible(root_bound: f64, nodes: usize) -> Self {
        Self {
            status: SolveStatus::Infeasible,
            values: Vec::new(),
            objective_value: f64::INFINITY,
            bound: f64::INFINITY,
            root_bound,
            nodes,
        }
    }

    pub fn has_incumbent(&self) -> bool {
        !self.values.is_empty()
    }

    pub fn value(&self, var: VarId) -> f64 {
        self.values[var.0]
    }

    pub fn value_by_name(&self, problem: &MilpProblem, name: &str) -> Option<f64> {
        problem.var_by_name(name).map(|v| self.values[v.0])
    }
}

struct Node {
    changes: Vec<(usize, f64, f64)>,
    parent_bound: f64,
    retried: bool,
}

/// Exact MILP solve by LP-based branch-and-bound.
///
/// Depth-first; branches on the most fractional integer variable (lowest
/// declaration index on ties), exploring the down branch first.
pub fn solve(problem: &MilpProblem, params: &SolveParams) -> MilpResult<MilpSolution> {
    solve_with_incumbent(problem, params, None)
}

/// Like [`solve`], seeded with a known feasible point. An infeasible or
/// incomplete hint is ignored.
pub fn solve_with_incumbent(problem: &MilpProblem, params: &SolveParams, hint: Option<&[f64]>) -> MilpResult<MilpSolution> {
    problem.validate()?;
    for v in problem.integer_vars() {
        let def = problem.var(v);
        if !def.lower.is_finite() || !def.upper.is_finite() {
            return Err(MilpError::UnboundedInteger(def.name.clone()));
        }
    }
    let started = Instant::now();
    let ints: Vec<usize> = problem.integer_vars().map(|v| v.0).collect();
    let root_bounds: Vec<(f64, f64)> = ints.iter().map(|&j| (problem.variables[j].lower.ceil(), problem.variables[j].upper.floor())).collect();

    let mut lp = LpEngine::new(problem)?;
    for (k, &j) in ints.iter().enumerate() {
        lp.set_bounds(j, root_bounds[k].0, root_bounds[k].1);
    }
    if root_bounds.iter().any(|&(l, u)| l > u) {
        return Ok(MilpSolution::infeasible(f64::INFINITY, 0));
    }
    let root_status = lp.solve()?;
    if root_status == LpStatus::Infeasible {
        return Ok(MilpSolution::infeasible(f64::INFINITY, 1));
    }
    if lp.hits_artificial_box() {
        return Err(MilpError::Unbounded);
    }
    let root_bound = lp.objective();

    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    if let Some(h) = hint {
        if h.len() == problem.num_vars() {
            if let Ok(viol) = verify(problem, h) {
                if viol.is_empty() {
                    incumbent = Some((problem.objective.eval(h), h.to_vec()));
                }
            }
        }
    }

    let mut stack = vec![Node {
        changes: Vec::new(),
        parent_bound: root_bound,
        retried: false,
    }];
    let mut nodes = 0usize;
    let mut pruned_bound = f64::INFINITY;
    let mut limit_hit = false;
    let mut first = true;

    while let Some(node) = stack.pop() {
        let inc_obj = incumbent.as_ref().map_or(f64::INFINITY, |(o, _)| *o);
        if node.parent_bound >= inc_obj - params.gap_tol {
            pruned_bound = pruned_bound.min(node.parent_bound);
            continue;
        }
        if params.node_limit.is_some_and(|lim| nodes >= lim)
            || params.time_limit_ms.is_some_and(|ms| started.elapsed().as_millis() as u64 >= ms)
        {
            pruned_bound = pruned_bound.min(node.parent_bound);
            for n in &stack {
                pruned_bound = pruned_bound.min(n.parent_bound);
            }
            limit_hit = true;
            break;
        }
        nodes += 1;
        let status = if first {
            first = false;
            root_status
        } else {
            for (k, &j) in ints.iter().enumerate() {
                lp.set_bounds(j, root_bounds[k].0, root_bounds[k].1);
            }
            for &(j, l, u) in &node.changes {
                lp.set_bounds(j, l, u);
            }
            match lp.solve() {
                Ok(s) => s,
                Err(MilpError::IterationLimit) => {
                    lp.refactor();
                    lp.solve()?
                }
                Err(e) => return Err(e),
            }
        };
        if status == LpStatus::Infeasible {
            continue;
        }
        let obj = lp.objective();
        if obj >= inc_obj - params.gap_tol {
            pruned_bound = pruned_bound.min(obj);
            continue;
        }
        let values = lp.values();
        let mut branch: Option<(usize, f64)> = None;
        let mut best_frac = INTEGRALITY_TOL;
        for &j in &ints {
            let v = values[j];
            let frac = (v - v.floor()).min(v.ceil() - v);
            if frac > best_frac + 1e-12 {
                best_frac = frac;
                branch = Some((j, v));
            }
        }
        match branch {
            None => {
                let mut rounded = values;
                for &j in &ints {
                    rounded[j] = rounded[j].round();
                }
                let feasible = verify(problem, &rounded).map(|v| v.is_empty()).unwrap_or(false);
                if !feasible {
                    // Round-off drift: rebuild the tableau and solve the node once more.
                    if !node.retried {
                        lp.refactor();
                        stack.push(Node { retried: true, ..node });
                    }
                    continue;
                }
                let robj = problem.objective.eval(&rounded);
                if robj < inc_obj {
                    incumbent = Some((robj, rounded));
                }
            }
            Some((j, v)) => {
                let (l, u) = lp.bounds(j);
                let mut up = node.changes.clone();
                up.push((j, v.ceil(), u));
                let mut down = node.changes;
                down.push((j, l, v.floor()));
                stack.push(Node {
                    changes: up,
                    parent_bound: obj,
                    retried: false,
                });
                stack.push(Node {
                    changes: down,
                    parent_bound: obj,
                    retried: false,
                });
            }
        }
    }

    let Some((obj, values)) = incumbent else {
        if limit_hit {
            return Ok(MilpSolution {
                status: SolveStatus::TimeLimit,
                values: Vec::new(),
                objective_value: f64::INFINITY,
                bound: pruned_bound.max(root_bound),
                root_bound,
                nodes,
            });
        }
        return Ok(MilpSolution::infeasible(root_bound, nodes));
    };
    let bound = pruned_bound.min(obj).max(root_bound.min(obj));
    let status = if obj - bound <= OPTIMALITY_GAP {
        SolveStatus::Optimal
    } else if limit_hit {
        SolveStatus::TimeLimit
    } else {
        SolveStatus::GapLimit
    };
    Ok(MilpSolution {
        status,
        values,
        objective_value: obj,
        bound,
        root_bound,
        nodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Domain, LinearExpr, Relation};

    #[test]
    fn forced_integer_bound() {
        let mut p = MilpProblem::new();
        let x = p.add_var("x", Domain::Integer, 0.0, 10.0);
        p.objective = LinearExpr::term(1.0, x);
        p.add_constraint("c", LinearExpr::term(1.0, x), Relation::Ge, 3.0);
        let s = solve(&p, &SolveParams::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert_eq!(s.value(x), 3.0);
        assert_eq!(s.objective_value, 3.0);
    }

    #[test]
    fn boolean_cover() {
        let mut p = MilpProblem::new();
        let a = p.bool_var("a");
        let b = p.bool_var("b");
        p.objective = LinearExpr::term(10.0, a);
        p.objective.add_term(15.0, b);
        let mut e = LinearExpr::term(1.0, a);
        e.add_term(1.0, b);
        p.add_constraint("cover", e, Relation::Ge, 1.0);
        let s = solve(&p, &SolveParams::default()).unwrap();
        assert_eq!(s.objective_value, 10.0);
        assert_eq!(s.value(a), 1.0);
        assert_eq!(s.value(b), 0.0);
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        let mut p = MilpProblem::new();
        let x = p.add_var("x", Domain::Integer, 0.0, 5.0);
        let y = p.add_var("y", Domain::Integer, 0.0, 5.0);
        let mut e = LinearExpr::term(1.0, x);
        e.add_term(1.0, y);
        p.add_constraint("sum", e, Relation::Le, 1.0);
        p.add_constraint("x", LinearExpr::term(1.0, x), Relation::Ge, 1.0);
        p.add_constraint("y", LinearExpr::term(1.0, y), Relation::Ge, 1.0);
        let s = solve(&p, &SolveParams::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Infeasible);
        assert!(!s.has_incumbent());
    }

    #[test]
    fn unbounded_is_an_error() {
        let mut p = MilpProblem::new();
        let x = p.add_var("x", Domain::Continuous, 0.0, f64::INFINITY);
        p.objective = LinearExpr::term(-1.0, x);
        assert_eq!(solve(&p, &SolveParams::default()), Err(MilpError::Unbounded));
    }

    #[test]
    fn unbounded_integer_rejected() {
        let mut p = MilpProblem::new();
        p.add_var("n", Domain::Integer, 0.0, f64::INFINITY);
        assert!(matches!(solve(&p, &SolveParams::default()), Err(MilpError::UnboundedInteger(_))));
    }

    #[test]
    fn node_limit_keeps_incumbent_from_hint() {
        let mut p = MilpProblem::new();
        let a = p.bool_var("a");
        let b = p.bool_var("b");
        p.objective = LinearExpr::term(3.0, a);
        p.objective.add_term(2.0, b);
        let mut e = LinearExpr::term(2.0, a);
        e.add_term(2.0, b);
        p.add_constraint("c", e, Relation::Ge, 1.0);
        let params = SolveParams {
            node_limit: Some(0),
            ..SolveParams::default()
        };
        let s = solve_with_incumbent(&p, &params, Some(&[1.0, 0.0])).unwrap();
        assert_eq!(s.status, SolveStatus::TimeLimit);
        assert_eq!(s.objective_value, 3.0);
        assert!(s.bound <= 2.0);
    }
}
