//! Fixed-format MPS export and plain-text solution import.
//!
//! Fields start at columns 2, 5, 15, 25, 40 and 50. Names longer than the
//! classic eight characters push later fields right, always leaving a blank
//! separator, so free-format readers parse the file unchanged.

use std::fmt::Write as _;
use std::path::Path;

use super::{LinearProgram, Sense, SolveResult, SolveStats, SolverError, Status};

const OBJ_ROW: &str = "OBJ";

fn pad_to(line: &mut String, col: usize) {
    // `col` is 1-based
    while line.len() < col - 1 {
        line.push(' ');
    }
    if !line.ends_with(' ') && !line.is_empty() {
        line.push(' ');
    }
}

fn fields(f1: &str, f2: &str, f3: &str, f4: &str, f5: &str, f6: &str) -> String {
    let mut line = String::new();
    for (col, text) in [(2, f1), (5, f2), (15, f3), (25, f4), (40, f5), (50, f6)] {
        if text.is_empty() {
            continue;
        }
        pad_to(&mut line, col);
        line.push_str(text);
    }
    line.push('\n');
    line
}

fn num(v: f64) -> String {
    // shortest representation that parses back to the same value
    format!("{v}")
}

/// Renders the program as an MPS document.
pub fn write_mps(lp: &LinearProgram, name: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "NAME          {name}");
    out.push_str("ROWS\n");
    out.push_str(&fields("N", OBJ_ROW, "", "", "", ""));
    for r in &lp.rows {
        let s = match r.sense {
            Sense::Le => "L",
            Sense::Eq => "E",
            Sense::Ge => "G",
        };
        out.push_str(&fields(s, &r.name, "", "", "", ""));
    }
    out.push_str("COLUMNS\n");
    let mut by_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); lp.n_cols()];
    for (i, r) in lp.rows.iter().enumerate() {
        for &(j, a) in &r.coeffs {
            by_col[j].push((i, a));
        }
    }
    let mut obj = vec![0.0; lp.n_cols()];
    if let Some(o) = &lp.objective {
        for &(j, c) in o {
            obj[j] += c;
        }
    }
    let mut in_int = false;
    let mut markers = 0;
    for (j, c) in lp.columns.iter().enumerate() {
        if c.integer != in_int {
            let kind = if c.integer { "'INTORG'" } else { "'INTEND'" };
            out.push_str(&fields("", &format!("MARKER{markers}"), "'MARKER'", "", kind, ""));
            markers += 1;
            in_int = c.integer;
        }
        let mut entries: Vec<(String, f64)> = Vec::new();
        if obj[j] != 0.0 || by_col[j].is_empty() {
            entries.push((OBJ_ROW.to_string(), obj[j]));
        }
        entries.extend(by_col[j].iter().map(|&(i, a)| (lp.rows[i].name.clone(), a)));
        for pair in entries.chunks(2) {
            let (r1, v1) = &pair[0];
            let (r2, v2) = pair.get(1).map_or((String::new(), String::new()), |(r, v)| (r.clone(), num(*v)));
            out.push_str(&fields("", &c.name, r1, &num(*v1), &r2, &v2));
        }
    }
    if in_int {
        out.push_str(&fields("", &format!("MARKER{markers}"), "'MARKER'", "", "'INTEND'", ""));
    }
    out.push_str("RHS\n");
    for r in lp.rows.iter().filter(|r| r.rhs != 0.0) {
        out.push_str(&fields("", "RHS", &r.name, &num(r.rhs), "", ""));
    }
    out.push_str("BOUNDS\n");
    for c in &lp.columns {
        if c.lb == c.ub {
            out.push_str(&fields("FX", "BND", &c.name, &num(c.lb), "", ""));
            continue;
        }
        if c.lb != 0.0 {
            out.push_str(&fields("LO", "BND", &c.name, &num(c.lb), "", ""));
        }
        if c.ub.is_finite() {
            out.push_str(&fields("UP", "BND", &c.name, &num(c.ub), "", ""));
        } else if c.integer {
            // some readers default integer columns to a unit upper bound
            out.push_str(&fields("PL", "BND", &c.name, "", "", ""));
        }
    }
    out.push_str("ENDATA\n");
    out
}

/// Writes the program to `path` in MPS format.
pub fn export_mps(lp: &LinearProgram, path: &Path) -> Result<(), SolverError> {
    std::fs::write(path, write_mps(lp, "FLEETCNT"))?;
    Ok(())
}

/// One `name value` line per column.
pub fn write_solution(lp: &LinearProgram, x: &[f64]) -> String {
    lp.columns.iter().zip(x).map(|(c, v)| format!("{} {}\n", c.name, v)).collect()
}

/// Parses `name value` lines (`#` starts a comment); unnamed columns default to 0.
pub fn parse_solution(lp: &LinearProgram, text: &str) -> Result<Vec<f64>, SolverError> {
    let index: std::collections::HashMap<&str, usize> =
        lp.columns.iter().enumerate().map(|(j, c)| (c.name.as_str(), j)).collect();
    let mut x = vec![0.0; lp.n_cols()];
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(name), Some(val), None) = (it.next(), it.next(), it.next()) else {
            return Err(SolverError::SolutionFormat { line: k + 1, text: raw.to_string() });
        };
        let v: f64 = val.parse().map_err(|_| SolverError::SolutionFormat { line: k + 1, text: raw.to_string() })?;
        let j = *index.get(name).ok_or_else(|| SolverError::UnknownVariable(name.to_string()))?;
        x[j] = v;
    }
    Ok(x)
}

/// Reads an external solution file and re-validates it against the raw rows.
pub fn import_solution(lp: &LinearProgram, path: &Path) -> Result<SolveResult, SolverError> {
    let x = parse_solution(lp, &std::fs::read_to_string(path)?)?;
    let integral = lp.columns.iter().zip(&x).all(|(c, v)| !c.integer || (v - v.round()).abs() <= super::INT_TOL);
    let ok = integral && lp.check_point(&x, super::PRIMAL_TOL).is_none();
    let stats = SolveStats { engine: "external".into(), ..SolveStats::default() };
    Ok(if ok {
        SolveResult { status: Status::Feasible, point: Some(x), stats }
    } else {
        SolveResult { status: Status::Infeasible, point: None, stats }
    })
}
