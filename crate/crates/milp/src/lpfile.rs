//! CPLEX-style LP text format.
//!
//! Grammar emitted by [`export_lp`], one item per line:
//!
//! ```text
//! Minimize
//!  obj: <expr>
//! Subject To
//!  <name>: <expr> <= | = | >= <number>
//! Bounds
//!  <lower> <= <var> <= <upper>   (finite upper)
//!  <var> >= <lower>              (infinite upper)
//! Generals
//!  <var> ...
//! Binaries
//!  <var> ...
//! End
//! ```
//!
//! `<expr>` is a sequence of terms `coef var` joined by ` + ` / ` - `; unit
//! coefficients are left out. Long rows wrap onto continuation lines that
//! start with a space and an operator. Every variable gets a bounds line in
//! declaration order so that [`parse_lp`] restores the original indices.
//! Variable and row names are written verbatim and must already be legal LP
//! identifiers.

use std::collections::HashMap;
use std::fmt::Write;

use crate::error::{MilpError, MilpResult};
use crate::model::{Domain, LinearExpr, MilpProblem, Relation, VarId};

const WRAP_AT: usize = 200;

fn fmt_num(v: f64) -> String {
    if v == f64::INFINITY {
        "+inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

fn push_expr(out: &mut String, line_start: usize, expr: &LinearExpr, problem: &MilpProblem, with_constant: bool) {
    let mut line_len = out.len() - line_start;
    let mut first = true;
    let mut pending: Vec<String> = Vec::new();
    for &(c, v) in expr.terms() {
        let name = &problem.variables[v.0].name;
        let mag = c.abs();
        let body = if mag == 1.0 { name.clone() } else { format!("{} {}", fmt_num(mag), name) };
        let piece = match (first, c < 0.0) {
            (true, false) => body,
            (true, true) => format!("- {body}"),
            (false, false) => format!(" + {body}"),
            (false, true) => format!(" - {body}"),
        };
        first = false;
        pending.push(piece);
    }
    if with_constant && expr.constant != 0.0 {
        let mag = fmt_num(expr.constant.abs());
        pending.push(match (first, expr.constant < 0.0) {
            (true, false) => mag,
            (true, true) => format!("- {mag}"),
            (false, false) => format!(" + {mag}"),
            (false, true) => format!(" - {mag}"),
        });
        first = false;
    }
    if first {
        match problem.variables.first() {
            Some(v) if !with_constant => pending.push(format!("0 {}", v.name)),
            _ => pending.push("0".into()),
        }
    }
    for piece in pending {
        if line_len + piece.len() > WRAP_AT && piece.starts_with(' ') {
            out.push('\n');
            line_len = 0;
        }
        line_len += piece.len();
        out.push_str(&piece);
    }
}

/// Renders `problem` in LP text format.
pub fn export_lp(problem: &MilpProblem) -> String {
    let mut out = String::new();
    out.push_str("Minimize\n");
    let start = out.len();
    out.push_str(" obj: ");
    push_expr(&mut out, start, &problem.objective, problem, true);
    out.push_str("\nSubject To\n");
    for c in &problem.constraints {
        let start = out.len();
        let _ = write!(out, " {}: ", c.name);
        push_expr(&mut out, start, &c.expr, problem, false);
        let _ = writeln!(out, " {} {}", c.relation, fmt_num(c.rhs - c.expr.constant));
    }
    out.push_str("Bounds\n");
    for v in &problem.variables {
        if v.upper.is_finite() {
            let _ = writeln!(out, " {} <= {} <= {}", fmt_num(v.lower), v.name, fmt_num(v.upper));
        } else {
            let _ = writeln!(out, " {} >= {}", v.name, fmt_num(v.lower));
        }
    }
    for (title, domain) in [("Generals", Domain::Integer), ("Binaries", Domain::Boolean)] {
        let names: Vec<&str> = problem.variables.iter().filter(|v| v.domain == domain).map(|v| v.name.as_str()).collect();
        if names.is_empty() {
            continue;
        }
        let _ = writeln!(out, "{title}");
        for chunk in names.chunks(10) {
            let _ = writeln!(out, " {}", chunk.join(" "));
        }
    }
    out.push_str("End\n");
    out
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Objective,
    Constraints,
    Bounds,
    Generals,
    Binaries,
    End,
}

fn parse_number(tok: &str, line: usize) -> MilpResult<f64> {
    match tok.to_ascii_lowercase().as_str() {
        "+inf" | "inf" | "+infinity" | "infinity" => Ok(f64::INFINITY),
        "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
        _ => tok.parse::<f64>().map_err(|_| MilpError::Parse {
            line,
            message: format!("expected a number, found `{tok}`"),
        }),
    }
}

fn is_number(tok: &str) -> bool {
    let body = tok.strip_prefix(['+', '-']).unwrap_or(tok);
    body.starts_with(|c: char| c.is_ascii_digit() || c == '.') && tok.parse::<f64>().is_ok()
}

struct RawRow {
    line: usize,
    name: String,
    lhs: Vec<(f64, String)>,
    constant: f64,
    relation: Option<Relation>,
    rhs: f64,
}

fn parse_terms(text: &str, line: usize, allow_relation: bool) -> MilpResult<RawRow> {
    let mut row = RawRow {
        line,
        name: String::new(),
        lhs: Vec::new(),
        constant: 0.0,
        relation: None,
        rhs: 0.0,
    };
    let mut sign = 1.0;
    let mut coef: Option<f64> = None;
    let mut tokens = text.split_whitespace().peekable();
    while let Some(tok) = tokens.next() {
        match tok {
            "+" => {}
            "-" => sign = -sign,
            "<=" | "=<" | "<" | ">=" | "=>" | ">" | "=" if allow_relation => {
                if let Some(c) = coef.take() {
                    row.constant += sign * c;
                }
                row.relation = Some(match tok {
                    "<=" | "=<" | "<" => Relation::Le,
                    "=" => Relation::Eq,
                    _ => Relation::Ge,
                });
                let rhs_tok = tokens.next().ok_or(MilpError::Parse {
                    line,
                    message: "missing right-hand side".into(),
                })?;
                row.rhs = parse_number(rhs_tok, line)?;
                if tokens.peek().is_some() {
                    return Err(MilpError::Parse {
                        line,
                        message: "trailing tokens after right-hand side".into(),
                    });
                }
                return Ok(row);
            }
            t if is_number(t) => {
                if let Some(c) = coef.take() {
                    row.constant += sign * c;
                    sign = 1.0;
                }
                coef = Some(parse_number(t, line)?);
            }
            name => {
                row.lhs.push((sign * coef.take().unwrap_or(1.0), name.to_string()));
                sign = 1.0;
            }
        }
    }
    if let Some(c) = coef {
        row.constant += sign * c;
    }
    if allow_relation {
        return Err(MilpError::Parse {
            line,
            message: "constraint without relation".into(),
        });
    }
    Ok(row)
}

/// Reads text produced by [`export_lp`] back into a problem.
pub fn parse_lp(text: &str) -> MilpResult<MilpProblem> {
    let mut section = Section::None;
    let mut objective: Option<RawRow> = None;
    let mut rows: Vec<RawRow> = Vec::new();
    let mut bounds: Vec<(String, f64, f64)> = Vec::new();
    let mut generals: Vec<String> = Vec::new();
    let mut binaries: Vec<String> = Vec::new();
    let mut current: Option<(usize, String, String)> = None;

    let flush = |current: &mut Option<(usize, String, String)>, section: Section, objective: &mut Option<RawRow>, rows: &mut Vec<RawRow>| -> MilpResult<()> {
        if let Some((line, name, body)) = current.take() {
            let mut row = parse_terms(&body, line, section == Section::Constraints)?;
            row.name = name;
            match section {
                Section::Objective => *objective = Some(row),
                _ => rows.push(row),
            }
        }
        Ok(())
    };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('\\').next().unwrap_or("");
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let keyword = match trimmed.to_ascii_lowercase().as_str() {
            "minimize" | "minimum" | "min" => Some(Section::Objective),
            "subject to" | "such that" | "st" | "s.t." => Some(Section::Constraints),
            "bounds" | "bound" => Some(Section::Bounds),
            "generals" | "general" | "gen" => Some(Section::Generals),
            "binaries" | "binary" | "bin" => Some(Section::Binaries),
            "end" => Some(Section::End),
            _ => None,
        };
        if let Some(next) = keyword {
            flush(&mut current, section, &mut objective, &mut rows)?;
            section = next;
            continue;
        }
        match section {
            Section::None | Section::End => {
                return Err(MilpError::Parse {
                    line: line_no,
                    message: format!("unexpected content `{trimmed}`"),
                })
            }
            Section::Objective | Section::Constraints => {
                let starts_row = !line.starts_with(' ') || trimmed.split_whitespace().next().is_some_and(|t| t.ends_with(':'));
                if starts_row {
                    flush(&mut current, section, &mut objective, &mut rows)?;
                    let (name, body) = trimmed.split_once(':').ok_or(MilpError::Parse {
                        line: line_no,
                        message: "row without name".into(),
                    })?;
                    current = Some((line_no, name.trim().to_string(), body.to_string()));
                } else {
                    let Some((_, _, body)) = current.as_mut() else {
                        return Err(MilpError::Parse {
                            line: line_no,
                            message: "continuation without row".into(),
                        });
                    };
                    body.push(' ');
                    body.push_str(trimmed);
                }
            }
            Section::Bounds => {
                let t: Vec<&str> = trimmed.split_whitespace().collect();
                let err = || MilpError::Parse {
                    line: line_no,
                    message: format!("unrecognized bound `{trimmed}`"),
                };
                match t.as_slice() {
                    [lo, "<=", name, "<=", hi] => bounds.push((name.to_string(), parse_number(lo, line_no)?, parse_number(hi, line_no)?)),
                    [name, ">=", lo] => bounds.push((name.to_string(), parse_number(lo, line_no)?, f64::INFINITY)),
                    [name, "<=", hi] => bounds.push((name.to_string(), 0.0, parse_number(hi, line_no)?)),
                    [name, "=", v] => {
                        let v = parse_number(v, line_no)?;
                        bounds.push((name.to_string(), v, v))
                    }
                    _ => return Err(err()),
                }
            }
            Section::Generals => generals.extend(trimmed.split_whitespace().map(String::from)),
            Section::Binaries => binaries.extend(trimmed.split_whitespace().map(String::from)),
        }
    }
    flush(&mut current, section, &mut objective, &mut rows)?;

    let mut problem = MilpProblem::new();
    let mut ids: HashMap<String, VarId> = HashMap::new();
    let domain_of = |name: &str| {
        if binaries.iter().any(|b| b == name) {
            Domain::Boolean
        } else if generals.iter().any(|g| g == name) {
            Domain::Integer
        } else {
            Domain::Continuous
        }
    };
    for (name, lo, hi) in &bounds {
        if let Some(&id) = ids.get(name) {
            problem.set_bounds(id, *lo, *hi);
        } else {
            let id = problem.add_var(name.clone(), domain_of(name), *lo, *hi);
            ids.insert(name.clone(), id);
        }
    }
    let mut resolve = |problem: &mut MilpProblem, name: &str| -> VarId {
        if let Some(&id) = ids.get(name) {
            return id;
        }
        let d = domain_of(name);
        let hi = if d == Domain::Boolean { 1.0 } else { f64::INFINITY };
        let id = problem.add_var(name.to_string(), d, 0.0, hi);
        ids.insert(name.to_string(), id);
        id
    };
    if let Some(obj) = objective {
        let mut e = LinearExpr::constant(obj.constant);
        for (c, n) in &obj.lhs {
            let v = resolve(&mut problem, n);
            e.add_term(*c, v);
        }
        problem.objective = e;
    }
    for row in rows {
        let mut e = LinearExpr::new();
        for (c, n) in &row.lhs {
            let v = resolve(&mut problem, n);
            e.add_term(*c, v);
        }
        let relation = row.relation.ok_or(MilpError::Parse {
            line: row.line,
            message: "constraint without relation".into(),
        })?;
        problem.add_constraint(row.name, e, relation, row.rhs - row.constant);
    }
    for name in generals.iter().chain(binaries.iter()) {
        resolve(&mut problem, name);
    }
    Ok(problem)
}
