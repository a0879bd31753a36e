use crate::error::{MilpError, MilpResult};
use crate::model::MilpProblem;

/// Absolute tolerance for constraint, bound and integrality checks.
pub const FEAS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// Constraint index and the amount by which it is missed.
    Constraint { index: usize, name: String, amount: f64 },
    Bound { var: usize, name: String, amount: f64 },
    Integrality { var: usize, name: String, value: f64 },
}

/// Lists every violated constraint, bound and integrality requirement at
/// `values`. An empty list means the point is feasible.
pub fn verify(problem: &MilpProblem, values: &[f64]) -> MilpResult<Vec<Violation>> {
    if values.len() < problem.num_vars() {
        return Err(MilpError::MissingValue(problem.variables[values.len()].name.clone()));
    }
    let mut out = Vec::new();
    for (j, v) in problem.variables.iter().enumerate() {
        let x = values[j];
        if !x.is_finite() {
            return Err(MilpError::MissingValue(v.name.clone()));
        }
        let amount = (v.lower - x).max(x - v.upper);
        if amount > FEAS_TOL {
            out.push(Violation::Bound {
                var: j,
                name: v.name.clone(),
                amount,
            });
        }
        if v.domain.is_integral() && (x - x.round()).abs() > FEAS_TOL {
            out.push(Violation::Integrality {
                var: j,
                name: v.name.clone(),
                value: x,
            });
        }
    }
    for (i, c) in problem.constraints.iter().enumerate() {
        let amount = c.violation(values);
        if amount > FEAS_TOL {
            out.push(Violation::Constraint {
                index: i,
                name: c.name.clone(),
                amount,
            });
        }
    }
    Ok(out)
}

/// Slack `rhs - lhs` (for `<=`), `lhs - rhs` (for `>=`) or `-|lhs - rhs|`
/// (for `=`) of every constraint.
pub fn slacks(problem: &MilpProblem, values: &[f64]) -> Vec<f64> {
    problem.constraints.iter().map(|c| -c.violation(values)).collect()
}
