use std::collections::HashMap;
use std::fmt;

use crate::error::MilpError;

/// Index of a variable inside a [`MilpProblem`], in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Continuous,
    Integer,
    Boolean,
}

impl Domain {
    pub fn is_integral(self) -> bool {
        !matches!(self, Domain::Continuous)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarDef {
    pub name: String,
    pub domain: Domain,
    pub lower: f64,
    pub upper: f64,
}

/// Sparse affine expression `Σ coef·var + constant`. Coefficients are merged
/// per variable and kept sorted by variable index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearExpr {
    terms: Vec<(f64, VarId)>,
    pub constant: f64,
}

impl LinearExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(value: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: value,
        }
    }

    pub fn term(coef: f64, var: VarId) -> Self {
        let mut e = Self::new();
        e.add_term(coef, var);
        e
    }

    pub fn add_term(&mut self, coef: f64, var: VarId) -> &mut Self {
        match self.terms.binary_search_by_key(&var, |&(_, v)| v) {
            Ok(pos) => {
                self.terms[pos].0 += coef;
                if self.terms[pos].0 == 0.0 {
                    self.terms.remove(pos);
                }
            }
            Err(pos) => {
                if coef != 0.0 {
                    self.terms.insert(pos, (coef, var));
                }
            }
        }
        self
    }

    pub fn add_constant(&mut self, value: f64) -> &mut Self {
        self.constant += value;
        self
    }

    /// `self += factor · other`
    pub fn add_scaled(&mut self, factor: f64, other: &LinearExpr) -> &mut Self {
        for &(c, v) in &other.terms {
            self.add_term(factor * c, v);
        }
        self.constant += factor * other.constant;
        self
    }

    pub fn terms(&self) -> &[(f64, VarId)] {
        &self.terms
    }

    pub fn coefficient(&self, var: VarId) -> f64 {
        self.terms
            .binary_search_by_key(&var, |&(_, v)| v)
            .map(|pos| self.terms[pos].0)
            .unwrap_or(0.0)
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn eval(&self, values: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|&(c, v)| c * values[v.0])
            .sum::<f64>()
            + self.constant
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub expr: LinearExpr,
    pub relation: Relation,
    pub rhs: f64,
}

impl Constraint {
    /// Signed distance from the feasible side: positive means violated by that much.
    pub fn violation(&self, values: &[f64]) -> f64 {
        let lhs = self.expr.eval(values);
        match self.relation {
            Relation::Le => lhs - self.rhs,
            Relation::Ge => self.rhs - lhs,
            Relation::Eq => (lhs - self.rhs).abs(),
        }
    }
}

/// A minimization problem over declared variables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MilpProblem {
    pub variables: Vec<VarDef>,
    pub objective: LinearExpr,
    pub constraints: Vec<Constraint>,
    names: HashMap<String, VarId>,
}

impl MilpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares a variable. Booleans are clamped into `[0, 1]`.
    pub fn add_var(&mut self, name: impl Into<String>, domain: Domain, lower: f64, upper: f64) -> VarId {
        let name = name.into();
        let (lower, upper) = match domain {
            Domain::Boolean => (lower.max(0.0), upper.min(1.0)),
            _ => (lower, upper),
        };
        let id = VarId(self.variables.len());
        self.names.insert(name.clone(), id);
        self.variables.push(VarDef {
            name,
            domain,
            lower,
            upper,
        });
        id
    }

    pub fn bool_var(&mut self, name: impl Into<String>) -> VarId {
        self.add_var(name, Domain::Boolean, 0.0, 1.0)
    }

    pub fn var_by_name(&self, name: &str) -> Option<VarId> {
        self.names.get(name).copied()
    }

    pub fn var(&self, id: VarId) -> &VarDef {
        &self.variables[id.0]
    }

    pub fn set_bounds(&mut self, id: VarId, lower: f64, upper: f64) {
        let v = &mut self.variables[id.0];
        v.lower = lower;
        v.upper = upper;
    }

    pub fn add_constraint(&mut self, name: impl Into<String>, expr: LinearExpr, relation: Relation, rhs: f64) -> usize {
        self.constraints.push(Constraint {
            name: name.into(),
            expr,
            relation,
            rhs,
        });
        self.constraints.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn integer_vars(&self) -> impl Iterator<Item = VarId> + '_ {
        self.variables
            .iter()
            .enumerate()
            .filter(|(_, v)| v.domain.is_integral())
            .map(|(i, _)| VarId(i))
    }

    /// Structural checks: bounds ordered, booleans within {0,1}, every
    /// referenced variable declared.
    pub fn validate(&self) -> Result<(), MilpError> {
        for v in &self.variables {
            if v.lower.is_nan() || v.upper.is_nan() || v.lower > v.upper {
                return Err(MilpError::InvalidBounds(v.name.clone()));
            }
            if v.lower == f64::NEG_INFINITY {
                return Err(MilpError::InvalidBounds(v.name.clone()));
            }
        }
        let n = self.variables.len();
        let check = |e: &LinearExpr| e.terms().iter().all(|&(c, v)| v.0 < n && c.is_finite());
        if !check(&self.objective) {
            return Err(MilpError::UndeclaredVariable("objective".into()));
        }
        for c in &self.constraints {
            if !check(&c.expr) || !c.rhs.is_finite() {
                return Err(MilpError::UndeclaredVariable(c.name.clone()));
            }
        }
        Ok(())
    }
}
