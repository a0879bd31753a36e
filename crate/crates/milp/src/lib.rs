//! Mixed-integer linear programs: model, exact branch-and-bound solver,
//! exhaustive oracle, feasibility checker and LP text export.

pub mod bnb;
pub mod error;
pub mod lpfile;
pub mod model;
pub mod oracle;
pub mod simplex;
pub mod verify;

pub use bnb::{solve, solve_with_incumbent, MilpSolution, SolveParams, SolveStatus};
pub use error::{MilpError, MilpResult};
pub use lpfile::{export_lp, parse_lp};
pub use model::{Constraint, Domain, LinearExpr, MilpProblem, Relation, VarDef, VarId};
pub use oracle::enumerate as enumerate_oracle;
pub use verify::{verify, Violation};
