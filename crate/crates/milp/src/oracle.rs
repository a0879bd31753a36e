//! Exhaustive reference solver for small problems.

use crate::bnb::{MilpSolution, SolveStatus};
use crate::error::{MilpError, MilpResult};
use crate::model::{Domain, MilpProblem};
use crate::simplex::{LpEngine, LpStatus};
use crate::verify::verify;

pub const GRID_LIMIT: f64 = 1e7;

/// Enumerates every integer assignment inside the bounds. With continuous
/// variables present, each grid point is completed by an LP over them.
pub fn enumerate(problem: &MilpProblem) -> MilpResult<MilpSolution> {
    problem.validate()?;
    let ints: Vec<usize> = problem.integer_vars().map(|v| v.0).collect();
    let mut ranges = Vec::with_capacity(ints.len());
    let mut points = 1.0f64;
    for &j in &ints {
        let v = &problem.variables[j];
        if !v.upper.is_finite() {
            return Err(MilpError::UnboundedInteger(v.name.clone()));
        }
        let (lo, hi) = (v.lower.ceil() as i64, v.upper.floor() as i64);
        points *= (hi - lo + 1).max(0) as f64;
        ranges.push((lo, hi));
    }
    if points > GRID_LIMIT {
        return Err(MilpError::GridTooLarge {
            points,
            limit: GRID_LIMIT,
        });
    }
    let has_continuous = problem.variables.iter().any(|v| v.domain == Domain::Continuous);
    let mut best: Option<(f64, Vec<f64>)> = None;
    if points == 0.0 {
        return Ok(MilpSolution::infeasible(f64::INFINITY, 0));
    }

    let mut lp = if has_continuous { Some(LpEngine::new(problem)?) } else { None };
    let mut cursor: Vec<i64> = ranges.iter().map(|r| r.0).collect();
    let mut count = 0usize;
    loop {
        count += 1;
        let candidate = match lp.as_mut() {
            Some(engine) => {
                for (k, &j) in ints.iter().enumerate() {
                    engine.set_bounds(j, cursor[k] as f64, cursor[k] as f64);
                }
                match engine.solve()? {
                    LpStatus::Infeasible => None,
                    LpStatus::Optimal => {
                        if engine.hits_artificial_box() {
                            return Err(MilpError::Unbounded);
                        }
                        let mut x = engine.values();
                        for (k, &j) in ints.iter().enumerate() {
                            x[j] = cursor[k] as f64;
                        }
                        Some(x)
                    }
                }
            }
            None => {
                let mut x = vec![0.0; problem.num_vars()];
                for (k, &j) in ints.iter().enumerate() {
                    x[j] = cursor[k] as f64;
                }
                Some(x)
            }
        };
        if let Some(x) = candidate {
            if verify(problem, &x)?.is_empty() {
                let obj = problem.objective.eval(&x);
                if best.as_ref().is_none_or(|(b, _)| obj < *b - 1e-12) {
                    best = Some((obj, x));
                }
            }
        }
        let mut k = 0;
        while k < cursor.len() {
            if cursor[k] < ranges[k].1 {
                cursor[k] += 1;
                break;
            }
            cursor[k] = ranges[k].0;
            k += 1;
        }
        if k == cursor.len() {
            break;
        }
    }
    Ok(match best {
        Some((obj, values)) => MilpSolution {
            status: SolveStatus::Optimal,
            values,
            objective_value: obj,
            bound: obj,
            root_bound: f64::NEG_INFINITY,
            nodes: count,
        },
        None => MilpSolution::infeasible(f64::INFINITY, count),
    })
}
